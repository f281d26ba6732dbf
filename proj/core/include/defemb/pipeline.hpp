#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "defemb/embedding.hpp"
#include "defemb/model.hpp"
#include "defemb/prompts.hpp"
#include "defemb/tokenizer.hpp"
#include "defemb/vocab.hpp"

namespace defemb {

// Toy pretraining, mimic training, reconstruction inference and the
// replacement machinery that swaps pre-trained embedding rows for definition
// embeddings.

// ---------------------------------------------------------------------------
// pretraining

struct PretrainConfig {
    ModelMode mode = ModelMode::encoder;
    int h_e = 32;
    int h_s = 32;
    int layers = 2;
    int heads = 2;
    int ffn = 64;
    int max_seq = 64;
    bool tie_lm_head = true;
    int seq_len = 32;           // sampled window length
    int batch = 8;
    double base_lr = 3e-3;
    int warmup = 100;
    double select_prob = 0.15;  // per-token corruption rate
};

struct TrainResult {
    Params<float> params;
    std::vector<double> loss_trace;  // one entry per step
};

// Masked-LM (encoder) or span-denoising (encoder_decoder) training over
// windows sampled from the tokenized corpus. Deterministic per seed.
TrainResult pretrain_toy_plm(const std::string& corpus, const Tokenizer& tok,
                             const PretrainConfig& cfg, int steps, uint64_t seed);

// mean of loss_trace[begin, begin+count); used for smoothed-loss assertions
double smoothed_mean(const std::vector<double>& xs, size_t begin, size_t count);

// ---------------------------------------------------------------------------
// mimic training (the ẽ reconstruction model)

struct MimicConfig {
    int batch = 8;
    double base_lr = 1e-3;
    int warmup = 100;
    bool freeze_body = false;  // train only W when set; embeddings always frozen
};

// Copies the pretrained model, enables the mimic head and freshly initializes
// W with N(0, 0.02²) draws.
Params<float> add_mimic_head(const Params<float>& plm, uint64_t seed);

// Minimizes the mean-squared mimic objective over corrupted definition
// prompts, with the pretrained embedding rows as targets. The corruption mode
// follows the model: encoder → masked-prompt (per-step random), encoder_decoder
// → sentinel denoising (deterministic). The embedding table is frozen so the
// targets stay fixed.
TrainResult train_mimic(const Params<float>& plm, const std::vector<Prompt>& prompts,
                        const Tokenizer& tok, const MimicConfig& cfg, int steps, uint64_t seed);

// ---------------------------------------------------------------------------
// reconstruction

struct WordReconstruction {
    std::string word;
    std::vector<int> token_ids;               // the K word-slot tokens
    std::vector<std::vector<float>> vectors;  // K definition embeddings ẽ
};

// Reads the trained model's states at the positions that predict the word-slot
// tokens (one masked pass per token for encoders; the delimiter positions of a
// single denoising pass for encoder-decoders) and maps them through W.
WordReconstruction reconstruct(const Params<float>& defemb, const Prompt& prompt,
                               const Tokenizer& tok);

// Per-token definition embeddings aggregated over a prompt set: a token's ẽ is
// the average of its word-slot reconstructions across all prompts (the surface
// slots exist to teach casing and never define the token).
struct Reconstructions {
    std::unordered_map<int, std::vector<float>> by_token;
    std::unordered_map<int, size_t> occurrences;

    bool has(int id) const { return by_token.count(id) != 0; }
};

Reconstructions build_reconstruction_bank(const Params<float>& defemb,
                                          const std::vector<Prompt>& prompts,
                                          const Tokenizer& tok);

// ---------------------------------------------------------------------------
// replacement plans

enum class ReplacementStrategy : uint8_t { last, random, top };

struct ReplacementConfig {
    double alpha = 5.0;  // percent of |V|
    ReplacementStrategy strategy = ReplacementStrategy::last;
    std::vector<int> exclusions;  // ids with no definition; never replaced
    uint64_t seed = 0;            // random strategy only
    int min_index_for_top = 5000; // top strategy: minimum pretraining rank
    bool backfill = false;        // keep consuming candidates past the window
                                  // until target_count ids survive the filters
};

struct ReplacementPlan {
    size_t target_count = 0;    // min(⌊alpha/100·|V|⌋, |V_task|)
    std::vector<int> selected;  // application order, filters already applied
    struct Skipped {
        int id = 0;
        std::string reason;  // "excluded" | "already-replaced"
    };
    std::vector<Skipped> skipped;
};

// Session-scoped replacement lock: a row replaced once is never replaced again.
struct ReplacementSession {
    std::unordered_set<int> replaced;
};

// task_ids must be the task vocabulary in pretraining-frequency order (see
// task_vocab). Candidate order by strategy: last → task list reversed (rarest
// first); random → seeded uniform permutation; top → task order restricted to
// pretraining rank ≥ min_index_for_top. The plan takes the first target_count
// candidates, then drops exclusions and already-replaced ids into `skipped`
// (or, with backfill, keeps consuming candidates until the target is met).
ReplacementPlan build_replacement_plan(const Vocabulary& vocab, const std::vector<int>& task_ids,
                                       const ReplacementConfig& cfg,
                                       const ReplacementSession& session = {});

struct ApplyResult {
    std::vector<int> replaced_ids;  // rows overwritten this application
    std::vector<int> locked_ids;    // skipped: already replaced this session
};

// Overwrites the selected rows of E with their definition embeddings and
// records them in the session lock. Errors (before touching E) if any selected
// unlocked id lacks a reconstruction or the widths disagree.
ApplyResult apply_plan(EmbeddingMatrix& E, const ReplacementPlan& plan,
                       const Reconstructions& recon, ReplacementSession& session);

// ---------------------------------------------------------------------------
// CLI artifacts. Reconstructions are JSONL rows sorted by id; plans and
// session locks are single JSON objects. All emit deterministically.

void save_reconstructions(const Reconstructions& r, const std::string& path);
Reconstructions load_reconstructions(const std::string& path);

void save_plan(const ReplacementPlan& p, const std::string& path);
ReplacementPlan load_plan(const std::string& path);

void save_session(const ReplacementSession& s, const std::string& path);
ReplacementSession load_session(const std::string& path);

}  // namespace defemb
