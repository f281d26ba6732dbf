#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace defemb {

// Byte-level BPE tokenizer.
//
// Id layout (dense, 0..vocab_size-1):
//   [0, num_specials)                     special tokens: <PAD> <MASK> <BOS>
//                                         <EOS> <MASK_1> .. <MASK_S>
//   [num_specials, num_specials+256)      the 256 single-byte tokens
//   [num_specials+256, vocab_size)        merged tokens, in merge order
//
// Token display strings use the classic printable-byte bijection (space maps
// to U+0120 "Ġ"), so every token serializes as a whitespace-free UTF-8 string
// and the model file stays line-oriented. Word-initial tokens therefore carry
// the "Ġ" marker. Decoding goes through raw bytes, never through the display
// form, so round-trips are lossless for arbitrary byte strings.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kMask = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    // Deterministic greedy pair-merge training. The pair with the highest
    // frequency is merged each round; ties break toward the lexicographically
    // smallest (left, right) display-string pair. Merging continues while any
    // adjacent pair exists, so a corpus too small for the target simply ends
    // at a smaller achieved size (reported, not an error). The seed is
    // accepted for interface symmetry and recorded by callers; the algorithm
    // itself consumes no randomness.
    static Tokenizer train(const std::string& corpus, int target_vocab_size,
                           int num_sentinels, uint64_t seed);

    static Tokenizer load(const std::string& path);
    void save(const std::string& path) const;

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return static_cast<int>(display_.size()); }
    int num_specials() const { return 4 + num_sentinels_; }
    int num_sentinels() const { return num_sentinels_; }
    int byte_base() const { return num_specials(); }
    int merged_base() const { return num_specials() + 256; }
    int target_vocab_size() const { return target_vocab_size_; }
    bool reached_target() const { return vocab_size() == target_vocab_size_; }

    // 1-based sentinel index (MASK_j)
    int sentinel_id(int j) const;
    bool is_special(int id) const { return id >= 0 && id < num_specials(); }

    // display string ("Ġ"-marked for non-specials, "<NAME>" for specials)
    const std::string& display(int id) const;
    // raw byte string; empty for specials
    const std::string& bytes(int id) const;

    const std::vector<std::pair<int, int>>& merges() const { return merges_; }

    // The four surface forms used by definition prompts. Each `ids` field is
    // the tokenization of the exact string that will be spliced into the
    // prompt; the word slot and the case variants are space-prefixed, the
    // bpe form is not.
    struct Form {
        std::string text;       // without the space prefix
        std::vector<int> ids;
    };
    struct WordTokenization {
        std::string word;
        std::vector<int> word_ids;  // tokenization of " " + word (K tokens)
        Form bpe_form;              // word, no space prefix
        Form capitalized;           // " " + Word
        Form uppercase;             // " " + WORD
        size_t k() const { return word_ids.size(); }
    };
    WordTokenization word_forms(const std::string& word) const;

private:
    Tokenizer() = default;
    void init_base(int num_sentinels);
    int add_merge(int left, int right);
    std::vector<int> encode_chunk(const std::string& chunk) const;

    int num_sentinels_ = 0;
    int target_vocab_size_ = 0;
    std::vector<std::pair<int, int>> merges_;
    std::vector<std::string> display_;    // id -> display string
    std::vector<std::string> bytes_;      // id -> raw bytes ("" for specials)
    std::unordered_map<std::string, int> display_to_id_;
    // (left,right) -> (rank, merged id)
    std::unordered_map<uint64_t, std::pair<int, int>> merge_rank_;
};

// Splits text into merge domains: a chunk is one newline, one orphan space,
// or an optional leading space plus a run of non-space/non-newline bytes.
// Concatenating chunks reproduces the text exactly; merges never cross chunk
// boundaries.
std::vector<std::string> pretokenize(const std::string& text);

// byte <-> display-codepoint bijection used for token display strings
const std::string& byte_display(unsigned char b);

}  // namespace defemb
