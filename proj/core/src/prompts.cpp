#include "defemb/prompts.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "defemb/error.hpp"
#include "defemb/io_util.hpp"
#include "defemb/rng.hpp"

namespace defemb {

DefinitionLoadReport load_definitions(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    DefinitionLoadReport rep;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            rep.bad_lines.push_back({i + 1, std::string("invalid JSON: ") + e.what()});
            continue;
        }
        if (!j.is_object() || !j.contains("word") || !j.contains("pos") ||
            !j.contains("definition") || !j.at("word").is_string() || !j.at("pos").is_string() ||
            !j.at("definition").is_string()) {
            rep.bad_lines.push_back({i + 1, "expected string fields word/pos/definition"});
            continue;
        }
        DefinitionRecord rec;
        rec.word = j.at("word").get<std::string>();
        rec.pos = j.at("pos").get<std::string>();
        rec.definition = j.at("definition").get<std::string>();
        if (rec.word.empty()) {
            rep.bad_lines.push_back({i + 1, "empty word"});
            continue;
        }
        rec.source_index = rep.records.size();
        rep.records.push_back(std::move(rec));
    }
    return rep;
}

namespace {

std::string trimmed(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\n' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\n' || s[b - 1] == '\r'))
        --b;
    return s.substr(a, b - a);
}

}  // namespace

Prompt build_full_prompt(const DefinitionRecord& rec, const Tokenizer& tok) {
    const auto forms = tok.word_forms(rec.word);
    const std::string pos = trimmed(rec.pos);
    const std::string def = trimmed(rec.definition);
    if (pos.empty()) throw Error::runtime("build_full_prompt: empty part-of-speech for '" +
                                          rec.word + "'");
    if (def.empty()) throw Error::runtime("build_full_prompt: empty definition for '" +
                                          rec.word + "'");

    Prompt p;
    p.def_index = rec.source_index;
    p.word_token_count = forms.word_ids.size();

    auto append = [&](const std::vector<int>& ids) {
        p.token_ids.insert(p.token_ids.end(), ids.begin(), ids.end());
    };
    auto append_text = [&](const std::string& text) { append(tok.encode(text)); };
    auto append_span = [&](int slot, const std::vector<int>& ids) {
        p.spans[size_t(slot)] = {p.token_ids.size(), ids.size()};
        append(ids);
    };

    // The bpe-form slot intentionally follows its comma with no space, which
    // is what strips the word-initial marker from its tokenization; all other
    // commas carry space on both sides.
    append_text("The definition of");
    append_span(0, forms.word_ids);
    append_text(" is");
    append_text(" " + def);
    append_text(" . Its part-of-speech , bpe-form without space , capitalization , and uppercase are");
    append_text(" " + pos);
    append_text(" ,");
    append_span(1, forms.bpe_form.ids);
    append_text(" ,");
    append_span(2, forms.capitalized.ids);
    append_text(" , and");
    append_span(3, forms.uppercase.ids);
    append_text(" , respectively .");

    p.rendered = tok.decode(p.token_ids);
    return p;
}

namespace {

std::vector<size_t> span_positions(const Prompt& p) {
    std::vector<size_t> pos;
    for (const Span& s : p.spans)
        for (size_t i = 0; i < s.length; ++i) pos.push_back(s.start + i);
    return pos;
}

}  // namespace

std::vector<CorruptedPrompt> corrupt_bert(const Prompt& p, const Tokenizer& tok, uint64_t seed,
                                          BertPhase phase) {
    const std::vector<size_t> positions = span_positions(p);
    if (positions.empty()) throw Error::runtime("corrupt_bert: prompt has no span tokens");
    std::vector<CorruptedPrompt> out;

    if (phase == BertPhase::infer) {
        for (const size_t pos : positions) {
            CorruptedPrompt c;
            c.mode = CorruptionMode::bert;
            c.source_ids = p.token_ids;
            c.source_ids[pos] = Tokenizer::kMask;
            c.kappa = {pos};
            c.kinds = {ReplacementKind::masked};
            out.push_back(std::move(c));
        }
        return out;
    }

    Rng rng(seed);
    std::vector<size_t> selected;
    do {
        selected.clear();
        for (const size_t pos : positions)
            if (rng.bernoulli(0.5)) selected.push_back(pos);
    } while (selected.empty());

    CorruptedPrompt c;
    c.mode = CorruptionMode::bert;
    c.source_ids = p.token_ids;
    const int non_special = tok.vocab_size() - tok.byte_base();
    for (const size_t pos : selected) {
        const double u = rng.uniform();
        ReplacementKind kind;
        if (u < 0.5) {
            kind = ReplacementKind::masked;
            c.source_ids[pos] = Tokenizer::kMask;
        } else if (u < 0.75) {
            kind = ReplacementKind::random;
            c.source_ids[pos] =
                tok.byte_base() + static_cast<int>(rng.below(static_cast<uint64_t>(non_special)));
        } else {
            kind = ReplacementKind::kept;
        }
        c.kappa.push_back(pos);
        c.kinds.push_back(kind);
    }
    out.push_back(std::move(c));
    return out;
}

CorruptedPrompt corrupt_t5(const Prompt& p, const Tokenizer& tok, uint64_t seed) {
    (void)seed;  // deterministic
    if (static_cast<int>(p.spans.size()) > tok.num_sentinels())
        throw Error::runtime("corrupt_t5: prompt needs " + std::to_string(p.spans.size()) +
                             " sentinels but tokenizer has " +
                             std::to_string(tok.num_sentinels()));
    CorruptedPrompt c;
    c.mode = CorruptionMode::t5;

    // source: walk the prompt, collapsing each span to its sentinel
    size_t i = 0;
    while (i < p.token_ids.size()) {
        bool in_span = false;
        for (size_t j = 0; j < p.spans.size(); ++j) {
            if (i == p.spans[j].start) {
                c.source_ids.push_back(tok.sentinel_id(static_cast<int>(j) + 1));
                i += p.spans[j].length;
                in_span = true;
                break;
            }
        }
        if (!in_span) {
            c.source_ids.push_back(p.token_ids[i]);
            ++i;
        }
    }

    // target: every corrupted token preceded by its span's sentinel
    for (size_t j = 0; j < p.spans.size(); ++j) {
        const Span& s = p.spans[j];
        for (size_t t = 0; t < s.length; ++t) {
            c.target_ids.push_back(tok.sentinel_id(static_cast<int>(j) + 1));
            c.target_ids.push_back(p.token_ids[s.start + t]);
            c.kappa.push_back(s.start + t);
            c.kinds.push_back(ReplacementKind::masked);
        }
    }
    return c;
}

std::vector<size_t> map_positions(const CorruptedPrompt& c) {
    std::vector<size_t> g(c.kappa.size());
    if (c.mode == CorruptionMode::bert) {
        g = c.kappa;
    } else {
        for (size_t k = 0; k < c.kappa.size(); ++k) g[k] = 2 * k + 1;
    }
    return g;
}

std::vector<int> t5_spliced_tokens(const CorruptedPrompt& c, const Tokenizer& tok) {
    if (c.mode != CorruptionMode::t5) throw Error::runtime("t5_spliced_tokens: not a t5 corruption");
    std::vector<int> tokens;
    for (size_t i = 0; i + 1 < c.target_ids.size(); i += 2) {
        const int sentinel = c.target_ids[i];
        if (!tok.is_special(sentinel))
            throw Error::runtime("t5_spliced_tokens: malformed target (position " +
                                 std::to_string(i) + " is not a sentinel)");
        tokens.push_back(c.target_ids[i + 1]);
    }
    return tokens;
}

std::string corrupted_prompt_to_json(const CorruptedPrompt& c) {
    nlohmann::json j;
    j["mode"] = c.mode == CorruptionMode::bert ? "bert" : "t5";
    j["source_ids"] = c.source_ids;
    j["target_ids"] = c.target_ids;
    j["kappa"] = c.kappa;
    std::vector<std::string> kinds;
    kinds.reserve(c.kinds.size());
    for (const ReplacementKind k : c.kinds)
        kinds.push_back(k == ReplacementKind::masked ? "masked"
                        : k == ReplacementKind::random ? "random" : "kept");
    j["kinds"] = kinds;
    return j.dump();
}

CorruptedPrompt corrupted_prompt_from_json(const std::string& line) {
    try {
        const nlohmann::json j = nlohmann::json::parse(line);
        CorruptedPrompt c;
        const std::string mode = j.at("mode").get<std::string>();
        if (mode == "bert")
            c.mode = CorruptionMode::bert;
        else if (mode == "t5")
            c.mode = CorruptionMode::t5;
        else
            throw Error::runtime("corrupted prompt: unknown mode '" + mode + "'");
        c.source_ids = j.at("source_ids").get<std::vector<int>>();
        c.target_ids = j.at("target_ids").get<std::vector<int>>();
        c.kappa = j.at("kappa").get<std::vector<size_t>>();
        for (const auto& k : j.at("kinds")) {
            const std::string s = k.get<std::string>();
            if (s == "masked")
                c.kinds.push_back(ReplacementKind::masked);
            else if (s == "random")
                c.kinds.push_back(ReplacementKind::random);
            else if (s == "kept")
                c.kinds.push_back(ReplacementKind::kept);
            else
                throw Error::runtime("corrupted prompt: unknown replacement kind '" + s + "'");
        }
        if (c.kinds.size() != c.kappa.size())
            throw Error::runtime("corrupted prompt: kinds/kappa length mismatch");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error::runtime(std::string("corrupted prompt: invalid JSON: ") + e.what());
    }
}

std::string prompt_to_json(const Prompt& p) {
    nlohmann::json j;
    j["token_ids"] = p.token_ids;
    std::vector<std::vector<size_t>> spans;
    for (const Span& s : p.spans) spans.push_back({s.start, s.length});
    j["spans"] = spans;
    j["rendered"] = p.rendered;
    j["word_token_count"] = p.word_token_count;
    j["def_index"] = p.def_index;
    return j.dump();
}

Prompt prompt_from_json(const std::string& line) {
    try {
        const nlohmann::json j = nlohmann::json::parse(line);
        Prompt p;
        p.token_ids = j.at("token_ids").get<std::vector<int>>();
        const auto spans = j.at("spans").get<std::vector<std::vector<size_t>>>();
        if (spans.size() != p.spans.size())
            throw Error::runtime("prompt: want " + std::to_string(p.spans.size()) +
                                 " spans, got " + std::to_string(spans.size()));
        for (size_t i = 0; i < spans.size(); ++i) {
            if (spans[i].size() != 2) throw Error::runtime("prompt: span must be [start, length]");
            p.spans[i] = Span{spans[i][0], spans[i][1]};
            if (p.spans[i].start + p.spans[i].length > p.token_ids.size())
                throw Error::runtime("prompt: span " + std::to_string(i) + " out of range");
        }
        p.rendered = j.at("rendered").get<std::string>();
        p.word_token_count = j.at("word_token_count").get<size_t>();
        p.def_index = j.at("def_index").get<size_t>();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error::runtime(std::string("prompt: invalid JSON: ") + e.what());
    }
}

}  // namespace defemb
