#include "defemb/tokenizer.hpp"

#include <array>
#include <climits>
#include <sstream>
#include <tuple>

#include "defemb/error.hpp"
#include "defemb/io_util.hpp"

namespace defemb {

namespace {

std::string utf8_of(uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

// Printable bytes keep their own codepoint; the rest (including space, which
// becomes U+0120 "Ġ") shift into U+0100.. so no display string ever contains
// whitespace or control characters.
struct ByteAlphabet {
    std::array<std::string, 256> display;

    ByteAlphabet() {
        auto printable = [](int b) {
            return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
        };
        uint32_t shifted = 0;
        for (int b = 0; b < 256; ++b) {
            uint32_t cp;
            if (printable(b)) {
                cp = static_cast<uint32_t>(b);
            } else {
                cp = 256 + shifted;
                ++shifted;
            }
            display[static_cast<size_t>(b)] = utf8_of(cp);
        }
    }
};

const ByteAlphabet& alphabet() {
    static const ByteAlphabet a;
    return a;
}

uint64_t pack_pair(int l, int r) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(l)) << 32) | static_cast<uint32_t>(r);
}

}  // namespace

const std::string& byte_display(unsigned char b) { return alphabet().display[b]; }

std::vector<std::string> pretokenize(const std::string& text) {
    std::vector<std::string> chunks;
    const size_t n = text.size();
    size_t i = 0;
    auto is_sep = [](char c) { return c == ' ' || c == '\n'; };
    while (i < n) {
        const char c = text[i];
        if (c == '\n') {
            chunks.emplace_back(1, '\n');
            ++i;
        } else if (c == ' ') {
            if (i + 1 < n && !is_sep(text[i + 1])) {
                size_t j = i + 1;
                while (j < n && !is_sep(text[j])) ++j;
                chunks.push_back(text.substr(i, j - i));
                i = j;
            } else {
                chunks.emplace_back(1, ' ');
                ++i;
            }
        } else {
            size_t j = i;
            while (j < n && !is_sep(text[j])) ++j;
            chunks.push_back(text.substr(i, j - i));
            i = j;
        }
    }
    return chunks;
}

void Tokenizer::init_base(int num_sentinels) {
    num_sentinels_ = num_sentinels;
    display_.clear();
    bytes_.clear();
    display_to_id_.clear();
    merges_.clear();
    merge_rank_.clear();

    auto add_special = [&](const std::string& name) {
        display_to_id_[name] = static_cast<int>(display_.size());
        display_.push_back(name);
        bytes_.emplace_back();
    };
    add_special("<PAD>");
    add_special("<MASK>");
    add_special("<BOS>");
    add_special("<EOS>");
    for (int j = 1; j <= num_sentinels; ++j) add_special("<MASK_" + std::to_string(j) + ">");

    for (int b = 0; b < 256; ++b) {
        const std::string& disp = byte_display(static_cast<unsigned char>(b));
        display_to_id_[disp] = static_cast<int>(display_.size());
        display_.push_back(disp);
        bytes_.emplace_back(1, static_cast<char>(b));
    }
}

int Tokenizer::add_merge(int left, int right) {
    const std::string disp = display_[static_cast<size_t>(left)] + display_[static_cast<size_t>(right)];
    // A duplicate display string would make the text model file ambiguous, so
    // the trainer skips pairs that would create one (see train()).
    const int id = static_cast<int>(display_.size());
    display_.push_back(disp);
    bytes_.push_back(bytes_[static_cast<size_t>(left)] + bytes_[static_cast<size_t>(right)]);
    display_to_id_.emplace(disp, id);
    merge_rank_[pack_pair(left, right)] = {static_cast<int>(merges_.size()), id};
    merges_.emplace_back(left, right);
    return id;
}

Tokenizer Tokenizer::train(const std::string& corpus, int target_vocab_size,
                           int num_sentinels, uint64_t seed) {
    (void)seed;  // deterministic; see header
    if (num_sentinels < 0) throw Error::usage("num_sentinels must be non-negative");
    Tokenizer tok;
    tok.init_base(num_sentinels);
    if (target_vocab_size <= tok.merged_base())
        throw Error::usage("target_vocab_size must exceed " + std::to_string(tok.merged_base()) +
                           " (specials + byte alphabet)");
    if (corpus.empty()) throw Error::runtime("tokenizer training corpus is empty");
    tok.target_vocab_size_ = target_vocab_size;

    // weighted distinct chunks
    std::unordered_map<std::string, uint64_t> chunk_count;
    for (const std::string& c : pretokenize(corpus)) ++chunk_count[c];
    std::vector<std::pair<std::vector<int>, uint64_t>> seqs;
    seqs.reserve(chunk_count.size());
    for (const auto& [chunk, cnt] : chunk_count) {
        std::vector<int> ids;
        ids.reserve(chunk.size());
        for (const char ch : chunk)
            ids.push_back(tok.byte_base() + static_cast<unsigned char>(ch));
        seqs.emplace_back(std::move(ids), cnt);
    }

    std::unordered_map<uint64_t, uint64_t> blocked;  // pairs skipped to keep displays unique

    while (tok.vocab_size() < target_vocab_size) {
        std::unordered_map<uint64_t, uint64_t> pair_count;
        for (const auto& [ids, cnt] : seqs)
            for (size_t i = 0; i + 1 < ids.size(); ++i)
                pair_count[pack_pair(ids[i], ids[i + 1])] += cnt;

        int best_l = -1, best_r = -1;
        uint64_t best_count = 0;
        for (const auto& [key, cnt] : pair_count) {
            if (blocked.count(key)) continue;
            const int l = static_cast<int>(key >> 32);
            const int r = static_cast<int>(key & 0xFFFFFFFFu);
            bool better = cnt > best_count;
            if (!better && cnt == best_count && best_l >= 0) {
                const auto& dl = tok.display_[static_cast<size_t>(l)];
                const auto& dr = tok.display_[static_cast<size_t>(r)];
                const auto& bl = tok.display_[static_cast<size_t>(best_l)];
                const auto& br = tok.display_[static_cast<size_t>(best_r)];
                better = std::tie(dl, dr) < std::tie(bl, br);
            }
            if (better) {
                best_l = l;
                best_r = r;
                best_count = cnt;
            }
        }
        if (best_l < 0) break;  // corpus exhausted: achieved size < target

        const std::string dup = tok.display_[static_cast<size_t>(best_l)] +
                                tok.display_[static_cast<size_t>(best_r)];
        if (tok.display_to_id_.count(dup)) {
            blocked.emplace(pack_pair(best_l, best_r), 0);
            continue;
        }
        const int merged = tok.add_merge(best_l, best_r);

        for (auto& [ids, cnt] : seqs) {
            (void)cnt;
            if (ids.size() < 2) continue;
            std::vector<int> out;
            out.reserve(ids.size());
            size_t i = 0;
            while (i < ids.size()) {
                if (i + 1 < ids.size() && ids[i] == best_l && ids[i + 1] == best_r) {
                    out.push_back(merged);
                    i += 2;
                } else {
                    out.push_back(ids[i]);
                    ++i;
                }
            }
            ids = std::move(out);
        }
    }
    return tok;
}

std::vector<int> Tokenizer::encode_chunk(const std::string& chunk) const {
    std::vector<int> ids;
    ids.reserve(chunk.size());
    for (const char ch : chunk) ids.push_back(byte_base() + static_cast<unsigned char>(ch));

    while (ids.size() >= 2) {
        int best_rank = INT_MAX, best_l = 0, best_r = 0, best_id = 0;
        for (size_t i = 0; i + 1 < ids.size(); ++i) {
            const auto it = merge_rank_.find(pack_pair(ids[i], ids[i + 1]));
            if (it != merge_rank_.end() && it->second.first < best_rank) {
                best_rank = it->second.first;
                best_l = ids[i];
                best_r = ids[i + 1];
                best_id = it->second.second;
            }
        }
        if (best_rank == INT_MAX) break;
        std::vector<int> out;
        out.reserve(ids.size());
        size_t i = 0;
        while (i < ids.size()) {
            if (i + 1 < ids.size() && ids[i] == best_l && ids[i + 1] == best_r) {
                out.push_back(best_id);
                i += 2;
            } else {
                out.push_back(ids[i]);
                ++i;
            }
        }
        ids = std::move(out);
    }
    return ids;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    std::unordered_map<std::string, std::vector<int>> memo;
    for (const std::string& chunk : pretokenize(text)) {
        auto it = memo.find(chunk);
        if (it == memo.end()) it = memo.emplace(chunk, encode_chunk(chunk)).first;
        ids.insert(ids.end(), it->second.begin(), it->second.end());
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= vocab_size())
            throw Error::runtime("decode: id " + std::to_string(id) + " out of range at position " +
                                 std::to_string(i));
        // control tokens carry no text
        if (!is_special(id)) out += bytes_[static_cast<size_t>(id)];
    }
    return out;
}

int Tokenizer::sentinel_id(int j) const {
    if (j < 1 || j > num_sentinels_)
        throw Error::runtime("sentinel index " + std::to_string(j) + " out of range (1.." +
                             std::to_string(num_sentinels_) + ")");
    return 3 + j;
}

const std::string& Tokenizer::display(int id) const {
    if (id < 0 || id >= vocab_size())
        throw Error::runtime("display: id " + std::to_string(id) + " out of range");
    return display_[static_cast<size_t>(id)];
}

const std::string& Tokenizer::bytes(int id) const {
    if (id < 0 || id >= vocab_size())
        throw Error::runtime("bytes: id " + std::to_string(id) + " out of range");
    return bytes_[static_cast<size_t>(id)];
}

Tokenizer::WordTokenization Tokenizer::word_forms(const std::string& word) const {
    if (word.empty()) throw Error::runtime("word_forms: empty word");
    for (const char c : word)
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r')
            throw Error::runtime("word_forms: word contains whitespace: '" + word + "'");

    auto ascii_upper = [](char c) {
        return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
    };
    std::string cap = word;
    cap[0] = ascii_upper(cap[0]);
    std::string upper = word;
    for (char& c : upper) c = ascii_upper(c);

    WordTokenization wt;
    wt.word = word;
    wt.word_ids = encode(" " + word);
    wt.bpe_form = {word, encode(word)};
    wt.capitalized = {cap, encode(" " + cap)};
    wt.uppercase = {upper, encode(" " + upper)};
    return wt;
}

void Tokenizer::save(const std::string& path) const {
    std::ostringstream out;
    out << "BPE1 " << vocab_size() << ' ' << num_sentinels_ << ' ' << target_vocab_size_ << '\n';
    for (const auto& [l, r] : merges_)
        out << display_[static_cast<size_t>(l)] << ' ' << display_[static_cast<size_t>(r)] << '\n';
    for (int id = 0; id < num_specials(); ++id) out << display_[static_cast<size_t>(id)] << '\n';
    write_text_file(path, out.str());
}

Tokenizer Tokenizer::load(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw Error::runtime(path + ": empty tokenizer file");
    std::istringstream header(lines[0]);
    std::string magic;
    int vocab = 0, sentinels = -1;
    header >> magic >> vocab >> sentinels;
    if (magic != "BPE1" || header.fail())
        throw Error::runtime(path + ": line 1: bad header (expected 'BPE1 <vocab> <sentinels>')");
    if (sentinels < 0) throw Error::runtime(path + ": line 1: negative sentinel count");
    int target = 0;
    if (!(header >> target)) target = vocab;  // older files lack the field

    Tokenizer tok;
    tok.init_base(sentinels);
    tok.target_vocab_size_ = target;
    const int num_merges = vocab - tok.merged_base();
    if (num_merges < 0)
        throw Error::runtime(path + ": line 1: vocab size " + std::to_string(vocab) +
                             " smaller than specials + byte alphabet");
    const size_t expected_lines = 1 + static_cast<size_t>(num_merges) +
                                  static_cast<size_t>(tok.num_specials());
    if (lines.size() < expected_lines)
        throw Error::runtime(path + ": truncated file (expected " + std::to_string(expected_lines) +
                             " lines, found " + std::to_string(lines.size()) + ")");

    for (int m = 0; m < num_merges; ++m) {
        const std::string& line = lines[static_cast<size_t>(1 + m)];
        const size_t sep = line.find(' ');
        if (sep == std::string::npos || sep == 0 || sep + 1 >= line.size())
            throw Error::runtime(path + ": line " + std::to_string(2 + m) + ": malformed merge rule");
        const std::string left = line.substr(0, sep);
        const std::string right = line.substr(sep + 1);
        const auto li = tok.display_to_id_.find(left);
        const auto ri = tok.display_to_id_.find(right);
        if (li == tok.display_to_id_.end() || ri == tok.display_to_id_.end())
            throw Error::runtime(path + ": line " + std::to_string(2 + m) +
                                 ": merge rule references unknown token");
        tok.add_merge(li->second, ri->second);
    }
    for (int id = 0; id < tok.num_specials(); ++id) {
        const size_t ln = static_cast<size_t>(1 + num_merges + id);
        if (lines[ln] != tok.display_[static_cast<size_t>(id)])
            throw Error::runtime(path + ": line " + std::to_string(ln + 1) +
                                 ": special token table mismatch (expected '" +
                                 tok.display_[static_cast<size_t>(id)] + "', found '" + lines[ln] +
                                 "')");
    }
    for (size_t ln = expected_lines; ln < lines.size(); ++ln)
        if (!lines[ln].empty())
            throw Error::runtime(path + ": line " + std::to_string(ln + 1) + ": trailing content");

    return tok;
}

}  // namespace defemb
