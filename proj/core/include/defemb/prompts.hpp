#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "defemb/tokenizer.hpp"

namespace defemb {

struct DefinitionRecord {
    std::string word;
    std::string pos;
    std::string definition;
    size_t source_index = 0;  // ordinal among the loaded records
};

struct DefinitionLoadReport {
    std::vector<DefinitionRecord> records;
    struct BadLine {
        size_t line = 0;  // 1-based
        std::string reason;
    };
    std::vector<BadLine> bad_lines;
};

// JSONL {"word","pos","definition"}; malformed lines are collected, not fatal
DefinitionLoadReport load_definitions(const std::string& path);

struct Span {
    size_t start = 0;
    size_t length = 0;
};

// A rendered definition prompt. The four corruption spans cover, in order:
// the in-sentence word slot (" word"), the bpe form (no leading space, sits
// directly after a comma), the capitalized variant and the uppercase variant
// (both space-prefixed). Built by concatenating per-segment tokenizations, so
// the span boundaries are exact by construction.
struct Prompt {
    std::vector<int> token_ids;
    std::array<Span, 4> spans;  // word, bpe_form, capitalized, uppercase
    std::string rendered;       // decode(token_ids)
    size_t word_token_count = 0;  // K
    size_t def_index = 0;
};

Prompt build_full_prompt(const DefinitionRecord& rec, const Tokenizer& tok);

enum class CorruptionMode : uint8_t { bert, t5 };
enum class ReplacementKind : uint8_t { masked, random, kept };
enum class BertPhase : uint8_t { train, infer };

struct CorruptedPrompt {
    CorruptionMode mode = CorruptionMode::bert;
    std::vector<int> source_ids;
    std::vector<int> target_ids;            // t5 only: (sentinel, token) alternating
    std::vector<size_t> kappa;              // corrupted positions in the original prompt
    std::vector<ReplacementKind> kinds;     // aligned with kappa
};

// Masked-LM-style corruption over the span tokens only.
//   train: each span token is independently selected with p=0.5 (the whole
//          selection is redrawn if it comes out empty); a selected token is
//          masked with p=0.5, replaced by a uniformly random non-special
//          token with p=0.25, kept with p=0.25. kappa = selected positions.
//   infer: one prompt per span token, masking exactly that token.
std::vector<CorruptedPrompt> corrupt_bert(const Prompt& p, const Tokenizer& tok, uint64_t seed,
                                          BertPhase phase);

// Denoising-style corruption: span j collapses to the single sentinel
// MASK_j in the source; the target lists every corrupted token preceded by
// its span's sentinel, so |target| = 2|kappa| and each odd position (1-based)
// holds a sentinel. Deterministic; the seed is accepted for interface
// symmetry.
CorruptedPrompt corrupt_t5(const Prompt& p, const Tokenizer& tok, uint64_t seed);

// For the k-th entry of kappa, the position whose final hidden state predicts
// that token: the (masked) source position itself for bert; for t5 the
// position of the token's sentinel in the BOS-shifted decoder input
// [BOS, y_1 .. y_{2J-1}], i.e. 2k+1.
std::vector<size_t> map_positions(const CorruptedPrompt& c);

// Reassemble the span tokens of a t5 corruption by splicing target tokens
// after each sentinel occurrence; returns them in original position order.
std::vector<int> t5_spliced_tokens(const CorruptedPrompt& c, const Tokenizer& tok);

// JSONL round-trip for corrupted prompts
std::string corrupted_prompt_to_json(const CorruptedPrompt& c);
CorruptedPrompt corrupted_prompt_from_json(const std::string& line);

// JSONL round-trip for built prompts
std::string prompt_to_json(const Prompt& p);
Prompt prompt_from_json(const std::string& line);

}  // namespace defemb
