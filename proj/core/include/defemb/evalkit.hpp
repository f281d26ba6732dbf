#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "defemb/embedding.hpp"
#include "defemb/geometry.hpp"
#include "defemb/matrix.hpp"
#include "defemb/rng.hpp"
#include "defemb/tokenizer.hpp"
#include "defemb/vocab.hpp"

namespace defemb {

// Word-similarity evaluation, MSE-distribution reports, the probing
// classifier, the embedding-dynamics harness and the report emitters.

// ---------------------------------------------------------------------------
// Spearman rank correlation

struct SpearmanResult {
    double rho = 0.0;
    bool defined = false;  // false when either input is constant (or too short)
};

// Pearson correlation of average ranks; ties receive their mean rank.
SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// ---------------------------------------------------------------------------
// word similarity

struct SimilarityTriple {
    std::string word_a, word_b;
    double gold = 0.0;
};

// Tab-separated `word_a<TAB>word_b<TAB>score`, one triple per line. Blank
// lines are ignored; malformed lines are errors with their line number.
std::vector<SimilarityTriple> load_similarity_tsv(const std::string& path);

enum class SimilarityMetric : uint8_t { dot, cosine };

struct WordSimilarityReport {
    SpearmanResult correlation;
    std::vector<double> predicted, gold;  // aligned over used pairs
    std::vector<size_t> used;             // dataset indices of the used pairs
    struct SkippedPair {
        size_t index = 0;
        std::string reason;
    };
    std::vector<SkippedPair> skipped;
};

// A word's embedding is the sum of the token embeddings of its space-prefixed
// tokenization; pair similarity per the metric; Spearman against gold. Pairs
// whose words cannot be scored (token id outside E, zero norm under cosine)
// are skipped and reported.
WordSimilarityReport word_similarity_eval(const EmbeddingMatrix& E, const Tokenizer& tok,
                                          const std::vector<SimilarityTriple>& ds,
                                          SimilarityMetric metric);

// ---------------------------------------------------------------------------
// MSE distribution between two embedding tables

struct MseDistribution {
    std::vector<double> mse;          // per row: squared L2 distance
    std::vector<double> bin_edges;    // ascending, first must be 0
    std::vector<size_t> counts;       // counts[i] covers [edge[i], edge[i+1]),
                                      // the last bin is open-ended
    std::vector<double> cumulative_ratio;  // nondecreasing, ends at 1
    std::vector<size_t> band_edges;   // pretraining-index bands, same scheme
    std::vector<std::vector<size_t>> band_counts;  // band × bin
};

// rank_of[id] gives the pretraining index used for the band cross-tab; empty
// means identity (band by raw id).
MseDistribution mse_distribution(const EmbeddingMatrix& pre, const EmbeddingMatrix& def,
                                 std::vector<double> bin_edges, std::vector<size_t> band_edges,
                                 const std::vector<int>& rank_of = {});

// ---------------------------------------------------------------------------
// probing classifier: dense(d → d) + tanh + dense(d → 3)

constexpr int kProbeClasses = 3;

struct ProbeExample {
    std::vector<float> state;
    int label = 0;  // 0: numeric < 1000, 1: numeric > 1000, 2: other
};

struct ProbeParams {
    Mat<float> w1, b1, w2, b2;
};

struct ProbeTrainConfig {
    int steps = 400;
    int batch = 32;
    double lr = 1e-2;
};

// Adam-trained softmax classifier over frozen states; deterministic per seed.
// Errors when the training set holds fewer than two classes.
ProbeParams train_probe(const std::vector<ProbeExample>& train, const ProbeTrainConfig& cfg,
                        uint64_t seed);

int probe_predict(const ProbeParams& p, const std::vector<float>& state);
double probe_accuracy(const ProbeParams& p, const std::vector<ProbeExample>& test);

// ---------------------------------------------------------------------------
// embedding-dynamics harness
//
// Trains a toy masked LM on a synthetic Zipfian stream in which only a
// truncated sub-vocabulary appears, and snapshots the embedding geometry as
// training proceeds. A reference stream over the full vocabulary defines the
// pretraining frequencies (and the warm start for pretrained init), so paired
// scratch/pretrained runs with one seed share corpora and groups exactly.

struct DynamicsConfig {
    enum class Init : uint8_t { scratch, pretrained };
    Init init = Init::scratch;
    bool weight_tying = true;
    int vocab = 256;            // id 0 is the reserved mask token
    double zipf_exponent = 1.1;
    int corpus_len = 20000;     // tokens per stream
    int appearing = 160;        // sub-vocabulary size of the task stream
    int steps = 1000;
    int snapshot_every = 100;
    int pretrain_steps = 500;   // pretrained init only
    int h_e = 32, h_s = 32, layers = 1, heads = 2, ffn = 64;
    int seq_len = 32, batch = 8;
    double base_lr = 3e-3;
    int warmup = 100;
    double select_prob = 0.15;
    uint64_t seed = 0;
};

struct DynamicsSnapshot {
    int step = 0;
    double isotropy_score = 1.0;
    bool isotropy_degenerate = false;
    DriftStats drift;           // vs the step-0 snapshot
    PairwiseCosine appearing_cosine;
    std::vector<std::array<double, 2>> projection;
    EmbeddingMatrix embedding;
};

struct DynamicsResult {
    Vocabulary vocab;                  // reference-stream frequencies
    GroupAssignment groups;            // 30/50/20 over appearing tokens
    std::vector<DynamicsSnapshot> snapshots;
    std::vector<double> loss_trace;
};

DynamicsResult dynamics_run(const DynamicsConfig& cfg);

// rank-frequency ∝ (rank+1)^(-exponent) over ids [first_id, first_id + n)
std::vector<int> zipf_stream(int first_id, int n, double exponent, int len, Rng& rng);

// ---------------------------------------------------------------------------
// report emitters (pure functions of their inputs; re-emission is
// byte-identical)

// `group,score` over frequent/medium/rare/all; undefined scores print as nan
void write_group_isotropy_csv(const GroupIsotropy& gi, std::ostream& out);

// `id,group,x,y`, one row per embedding row; groups may be null (group "all")
void write_projection_csv(const Projection2D& proj, const GroupAssignment* groups,
                          std::ostream& out);

// `word_a,word_b,predicted,gold,status`
void write_similarity_csv(const std::vector<SimilarityTriple>& ds,
                          const WordSimilarityReport& rep, std::ostream& out);

// `bin_lo,bin_hi,count,cumulative_ratio[,band_<lo>…]`; the open-ended upper
// edge prints as inf
void write_mse_distribution_csv(const MseDistribution& d, std::ostream& out);

// `step,group,mean_displacement,mean_cosine,isotropy,appearing_mean_cosine`
void write_dynamics_csv(const DynamicsResult& r, std::ostream& out);

// scatter of projection points colored by group, 640×640 viewport
void write_scatter_svg(const Projection2D& proj, const GroupAssignment* groups,
                       std::ostream& out);

}  // namespace defemb
