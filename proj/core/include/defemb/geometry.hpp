#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "defemb/embedding.hpp"
#include "defemb/matrix.hpp"
#include "defemb/vocab.hpp"

namespace defemb {

// Isotropy score I(E) = min_b Z(b) / max_b Z(b), where b ranges over the
// eigenvectors of EᵀE and Z(b) = Σᵢ exp(bᵀeᵢ). Partition values are kept in
// log domain (log-sum-exp accumulated in fixed row order, so results are
// bit-stable run to run). Eigenvector signs are fixed covariantly: b is
// flipped so that Σᵢ bᵀeᵢ ≥ 0, falling back to first-nonzero-positive on an
// exact tie. Because Z(b) ≠ Z(−b), a coordinate-based sign rule would make
// the score depend on the basis; the covariant rule commutes with right
// rotation, so I(ER) = I(E) for orthogonal R, and h_e = 1 yields exactly 1.0.
struct IsotropyBreakdown {
    std::vector<double> eigenvalues;   // ascending
    Mat<double> eigenvectors;          // one eigenvector per row, sign-fixed
    std::vector<double> log_partition; // log Z per eigenvector
    double score = 1.0;
    // true when some adjacent eigenvalue gap is below 1e-10 of the spectrum
    // scale; the eigenbasis (hence the score) is then solver-dependent
    bool degenerate_spectrum = false;
};

IsotropyBreakdown isotropy(const EmbeddingMatrix& emb);

// double-precision variant (same algorithm; storage precision is the only
// difference). Properties like rotation invariance hold to ~1e-15 here,
// whereas float storage of the input caps them near 1e-7.
IsotropyBreakdown isotropy(const Mat<double>& emb);

// Post-processing that removes the common mean and the top-beta principal
// components of the centered matrix. beta < 0 selects the default
// max(1, h_e/100).
struct DelDirectionConfig {
    int beta = -1;
};

struct DelDirectionResult {
    EmbeddingMatrix out;
    std::vector<double> mean;       // removed column mean (h_e)
    Mat<double> removed_directions; // beta rows, each a unit principal direction
};

DelDirectionResult del_direction(const EmbeddingMatrix& emb, const DelDirectionConfig& cfg = {});

// double-precision variant of DelDirectionResult / del_direction
struct DelDirectionDense {
    Mat<double> out;
    std::vector<double> mean;
    Mat<double> removed_directions;
};

DelDirectionDense del_direction(const Mat<double>& emb, const DelDirectionConfig& cfg = {});

// Projection onto the top-2 right singular directions (same covariant sign
// rule). Column norms of the projected coordinates equal the top two singular
// values.
struct Projection2D {
    std::vector<std::array<double, 2>> points;  // one per row of E
    std::array<double, 2> singular_values{};
};

Projection2D svd_project2d(const EmbeddingMatrix& emb);

// I(E) per token group plus the all-token score. Empty groups are flagged
// rather than scored.
struct GroupIsotropy {
    struct Entry {
        bool defined = false;
        double score = 0.0;
        size_t members = 0;
        bool degenerate_spectrum = false;
    };
    Entry frequent, medium, rare, non_appearing, all;

    const Entry& of(Group g) const;
};

GroupIsotropy group_isotropy(const EmbeddingMatrix& emb, const GroupAssignment& groups);

// Embedding movement between two matrices of identical shape: per-group mean
// displacement ‖after − before‖ and mean cosine(before, after). Rows with an
// exactly-zero norm on either side are excluded from the cosine mean and
// counted.
struct DriftStats {
    struct Entry {
        size_t members = 0;
        double mean_displacement = 0.0;
        double mean_cosine = 0.0;
        bool cosine_defined = false;
        size_t zero_norm_excluded = 0;
    };
    Entry frequent, medium, rare, non_appearing, all;

    const Entry& of(Group g) const;
};

DriftStats drift_stats(const EmbeddingMatrix& before, const EmbeddingMatrix& after,
                       const GroupAssignment& groups);

// Mean cosine over unordered row pairs of the selected ids: exhaustive when
// sample_pairs covers all n(n-1)/2 pairs, otherwise seeded Monte-Carlo.
// Zero-norm rows are dropped first and counted.
struct PairwiseCosine {
    double mean = 0.0;
    size_t pairs = 0;
    size_t zero_rows_excluded = 0;
    bool defined = false;
    bool exhaustive = false;
};

PairwiseCosine mean_pairwise_cosine(const EmbeddingMatrix& emb, const std::vector<int>& ids,
                                    size_t sample_pairs, uint64_t seed);

}  // namespace defemb
