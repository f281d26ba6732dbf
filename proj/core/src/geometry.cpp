#include "defemb/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "defemb/error.hpp"
#include "defemb/rng.hpp"

namespace defemb {

namespace {

Eigen::MatrixXd to_eigen(const EmbeddingMatrix& emb) {
    Eigen::MatrixXd m(emb.rows, emb.cols);
    for (uint32_t i = 0; i < emb.rows; ++i)
        for (uint32_t j = 0; j < emb.cols; ++j) m(i, j) = emb.row(i)[j];
    return m;
}

Eigen::MatrixXd to_eigen(const Mat<double>& emb) {
    Eigen::MatrixXd m(long(emb.rows), long(emb.cols));
    for (size_t i = 0; i < emb.rows; ++i)
        for (size_t j = 0; j < emb.cols; ++j) m(long(i), long(j)) = emb[i][j];
    return m;
}

void check_finite(const EmbeddingMatrix& emb, const char* op) {
    for (uint32_t i = 0; i < emb.rows; ++i)
        for (uint32_t j = 0; j < emb.cols; ++j)
            if (!std::isfinite(emb.row(i)[j]))
                throw Error::runtime(std::string(op) + ": non-finite entry at row " +
                                     std::to_string(i) + ", column " + std::to_string(j));
}

void check_finite(const Mat<double>& emb, const char* op) {
    for (size_t i = 0; i < emb.rows; ++i)
        for (size_t j = 0; j < emb.cols; ++j)
            if (!std::isfinite(emb[i][j]))
                throw Error::runtime(std::string(op) + ": non-finite entry at row " +
                                     std::to_string(i) + ", column " + std::to_string(j));
}

// flip v in place so the data projection sum is non-negative (covariant sign
// rule); exact zero falls back to first-nonzero-positive
void fix_sign(Eigen::VectorXd& v, const Eigen::MatrixXd& rows) {
    const double proj_sum = (rows * v).sum();
    if (proj_sum > 0.0) return;
    if (proj_sum < 0.0) {
        v = -v;
        return;
    }
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) != 0.0) {
            if (v(i) < 0.0) v = -v;
            return;
        }
    }
}

// log Σᵢ exp(dᵢ) accumulated in index order
double log_sum_exp(const Eigen::VectorXd& d) {
    const double m = d.maxCoeff();
    double s = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) s += std::exp(d(i) - m);
    return m + std::log(s);
}

IsotropyBreakdown isotropy_core(const Eigen::MatrixXd& E) {
    const Eigen::MatrixXd G = E.transpose() * E;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(G);
    if (solver.info() != Eigen::Success)
        throw Error::runtime("isotropy: eigendecomposition failed to converge");

    const size_t h = size_t(E.cols());
    IsotropyBreakdown out;
    out.eigenvalues.resize(h);
    for (size_t j = 0; j < h; ++j) out.eigenvalues[j] = solver.eigenvalues()(long(j));

    const double scale = std::max(std::abs(out.eigenvalues.front()),
                                  std::abs(out.eigenvalues.back()));
    for (size_t j = 0; j + 1 < h; ++j) {
        const double gap = out.eigenvalues[j + 1] - out.eigenvalues[j];
        if (gap < 1e-10 * std::max(scale, std::numeric_limits<double>::min())) {
            out.degenerate_spectrum = true;
            break;
        }
    }
    if (scale == 0.0) out.degenerate_spectrum = h > 1;

    out.eigenvectors = Mat<double>(h, h);
    out.log_partition.resize(h);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < h; ++j) {
        Eigen::VectorXd b = solver.eigenvectors().col(long(j));
        fix_sign(b, E);
        for (size_t t = 0; t < h; ++t) out.eigenvectors[j][t] = b(long(t));
        const double lz = log_sum_exp(E * b);
        out.log_partition[j] = lz;
        lo = std::min(lo, lz);
        hi = std::max(hi, lz);
    }
    out.score = (h == 1) ? 1.0 : std::exp(lo - hi);
    return out;
}

// centers X in place, strips the top-beta principal directions and reports
// the removed mean/directions
struct DelCore {
    std::vector<double> mean;
    Mat<double> removed_directions;
};

DelCore del_direction_core(Eigen::MatrixXd& X, int requested_beta) {
    const int h = int(X.cols());
    int beta = requested_beta;
    if (beta < 0) beta = std::max(1, h / 100);
    if (beta > h)
        throw Error::usage("del_direction: beta " + std::to_string(beta) +
                           " exceeds embedding width " + std::to_string(h));

    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;

    DelCore res;
    res.mean.assign(mean.data(), mean.data() + h);
    res.removed_directions = Mat<double>(static_cast<size_t>(beta), static_cast<size_t>(h));

    if (beta > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(X.transpose() * X);
        if (solver.info() != Eigen::Success)
            throw Error::runtime("del_direction: eigendecomposition failed to converge");
        // top-beta principal directions = last beta eigenvectors (ascending order)
        Eigen::MatrixXd U(h, beta);
        for (int j = 0; j < beta; ++j) {
            Eigen::VectorXd u = solver.eigenvectors().col(h - 1 - j);
            fix_sign(u, X);
            U.col(j) = u;
            for (int t = 0; t < h; ++t) res.removed_directions[size_t(j)][size_t(t)] = u(t);
        }
        X -= (X * U) * U.transpose();
    }
    return res;
}

}  // namespace

IsotropyBreakdown isotropy(const EmbeddingMatrix& emb) {
    if (emb.rows == 0 || emb.cols == 0) throw Error::runtime("isotropy: empty matrix");
    check_finite(emb, "isotropy");
    return isotropy_core(to_eigen(emb));
}

IsotropyBreakdown isotropy(const Mat<double>& emb) {
    if (emb.rows == 0 || emb.cols == 0) throw Error::runtime("isotropy: empty matrix");
    check_finite(emb, "isotropy");
    return isotropy_core(to_eigen(emb));
}

DelDirectionResult del_direction(const EmbeddingMatrix& emb, const DelDirectionConfig& cfg) {
    if (emb.rows == 0 || emb.cols == 0) throw Error::runtime("del_direction: empty matrix");
    check_finite(emb, "del_direction");
    Eigen::MatrixXd X = to_eigen(emb);
    DelCore core = del_direction_core(X, cfg.beta);

    DelDirectionResult res;
    res.mean = std::move(core.mean);
    res.removed_directions = std::move(core.removed_directions);
    res.out = EmbeddingMatrix(emb.rows, emb.cols);
    for (uint32_t i = 0; i < emb.rows; ++i)
        for (uint32_t j = 0; j < emb.cols; ++j)
            res.out.row(i)[j] = static_cast<float>(X(i, j));
    return res;
}

DelDirectionDense del_direction(const Mat<double>& emb, const DelDirectionConfig& cfg) {
    if (emb.rows == 0 || emb.cols == 0) throw Error::runtime("del_direction: empty matrix");
    check_finite(emb, "del_direction");
    Eigen::MatrixXd X = to_eigen(emb);
    DelCore core = del_direction_core(X, cfg.beta);

    DelDirectionDense res;
    res.mean = std::move(core.mean);
    res.removed_directions = std::move(core.removed_directions);
    res.out = Mat<double>(emb.rows, emb.cols);
    for (size_t i = 0; i < emb.rows; ++i)
        for (size_t j = 0; j < emb.cols; ++j) res.out[i][j] = X(long(i), long(j));
    return res;
}

Projection2D svd_project2d(const EmbeddingMatrix& emb) {
    if (emb.cols < 2) throw Error::runtime("svd_project2d: embedding width below 2");
    check_finite(emb, "svd_project2d");
    const Eigen::MatrixXd E = to_eigen(emb);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(E, Eigen::ComputeThinV);

    Projection2D out;
    out.points.resize(emb.rows);
    for (int k = 0; k < 2; ++k) {
        Eigen::VectorXd v = svd.matrixV().col(k);
        fix_sign(v, E);
        const Eigen::VectorXd coords = E * v;
        out.singular_values[size_t(k)] = svd.singularValues()(k);
        for (uint32_t i = 0; i < emb.rows; ++i) out.points[i][size_t(k)] = coords(long(i));
    }
    return out;
}

namespace {

EmbeddingMatrix submatrix(const EmbeddingMatrix& emb, const std::vector<int>& ids) {
    EmbeddingMatrix sub(static_cast<uint32_t>(ids.size()), emb.cols);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(emb.row(size_t(ids[i])), emb.row(size_t(ids[i])) + emb.cols, sub.row(i));
    return sub;
}

GroupIsotropy::Entry isotropy_entry(const EmbeddingMatrix& emb, const std::vector<int>& ids) {
    GroupIsotropy::Entry e;
    e.members = ids.size();
    if (ids.empty()) return e;
    const IsotropyBreakdown br = isotropy(submatrix(emb, ids));
    e.defined = true;
    e.score = br.score;
    e.degenerate_spectrum = br.degenerate_spectrum;
    return e;
}

}  // namespace

const GroupIsotropy::Entry& GroupIsotropy::of(Group g) const {
    switch (g) {
        case Group::frequent: return frequent;
        case Group::medium: return medium;
        case Group::rare: return rare;
        case Group::non_appearing: return non_appearing;
    }
    return all;
}

GroupIsotropy group_isotropy(const EmbeddingMatrix& emb, const GroupAssignment& groups) {
    if (groups.group_of.size() != emb.rows)
        throw Error::runtime("group_isotropy: group assignment covers " +
                             std::to_string(groups.group_of.size()) + " ids, matrix has " +
                             std::to_string(emb.rows) + " rows");
    GroupIsotropy gi;
    gi.frequent = isotropy_entry(emb, groups.members(Group::frequent));
    gi.medium = isotropy_entry(emb, groups.members(Group::medium));
    gi.rare = isotropy_entry(emb, groups.members(Group::rare));
    gi.non_appearing = isotropy_entry(emb, groups.members(Group::non_appearing));
    std::vector<int> all_ids(emb.rows);
    for (uint32_t i = 0; i < emb.rows; ++i) all_ids[i] = static_cast<int>(i);
    gi.all = isotropy_entry(emb, all_ids);
    return gi;
}

const DriftStats::Entry& DriftStats::of(Group g) const {
    switch (g) {
        case Group::frequent: return frequent;
        case Group::medium: return medium;
        case Group::rare: return rare;
        case Group::non_appearing: return non_appearing;
    }
    return all;
}

namespace {

DriftStats::Entry drift_entry(const EmbeddingMatrix& before, const EmbeddingMatrix& after,
                              const std::vector<int>& ids) {
    DriftStats::Entry e;
    e.members = ids.size();
    if (ids.empty()) return e;
    double disp_sum = 0.0, cos_sum = 0.0;
    size_t cos_n = 0;
    for (const int id : ids) {
        const float* b = before.row(size_t(id));
        const float* a = after.row(size_t(id));
        double d2 = 0.0, nb = 0.0, na = 0.0, dot = 0.0;
        for (uint32_t j = 0; j < before.cols; ++j) {
            const double db = b[j], da = a[j];
            d2 += (da - db) * (da - db);
            nb += db * db;
            na += da * da;
            dot += da * db;
        }
        disp_sum += std::sqrt(d2);
        if (nb == 0.0 || na == 0.0) {
            ++e.zero_norm_excluded;
        } else {
            cos_sum += dot / (std::sqrt(nb) * std::sqrt(na));
            ++cos_n;
        }
    }
    e.mean_displacement = disp_sum / static_cast<double>(ids.size());
    if (cos_n > 0) {
        e.mean_cosine = cos_sum / static_cast<double>(cos_n);
        e.cosine_defined = true;
    }
    return e;
}

}  // namespace

DriftStats drift_stats(const EmbeddingMatrix& before, const EmbeddingMatrix& after,
                       const GroupAssignment& groups) {
    if (before.rows != after.rows || before.cols != after.cols)
        throw Error::runtime("drift_stats: shape mismatch (" + std::to_string(before.rows) + "x" +
                             std::to_string(before.cols) + " vs " + std::to_string(after.rows) +
                             "x" + std::to_string(after.cols) + ")");
    if (groups.group_of.size() != before.rows)
        throw Error::runtime("drift_stats: group assignment size mismatch");
    DriftStats ds;
    ds.frequent = drift_entry(before, after, groups.members(Group::frequent));
    ds.medium = drift_entry(before, after, groups.members(Group::medium));
    ds.rare = drift_entry(before, after, groups.members(Group::rare));
    ds.non_appearing = drift_entry(before, after, groups.members(Group::non_appearing));
    std::vector<int> all_ids(before.rows);
    for (uint32_t i = 0; i < before.rows; ++i) all_ids[i] = static_cast<int>(i);
    ds.all = drift_entry(before, after, all_ids);
    return ds;
}

PairwiseCosine mean_pairwise_cosine(const EmbeddingMatrix& emb, const std::vector<int>& ids,
                                    size_t sample_pairs, uint64_t seed) {
    check_finite(emb, "mean_pairwise_cosine");
    PairwiseCosine pc;

    // keep rows with nonzero norm, pre-normalized
    std::vector<std::vector<double>> unit;
    unit.reserve(ids.size());
    for (const int id : ids) {
        if (id < 0 || static_cast<uint32_t>(id) >= emb.rows)
            throw Error::runtime("mean_pairwise_cosine: id " + std::to_string(id) +
                                 " out of range");
        const float* r = emb.row(size_t(id));
        double n2 = 0.0;
        for (uint32_t j = 0; j < emb.cols; ++j) n2 += double(r[j]) * r[j];
        if (n2 == 0.0) {
            ++pc.zero_rows_excluded;
            continue;
        }
        const double inv = 1.0 / std::sqrt(n2);
        std::vector<double> u(emb.cols);
        for (uint32_t j = 0; j < emb.cols; ++j) u[j] = r[j] * inv;
        unit.push_back(std::move(u));
    }

    const size_t n = unit.size();
    if (n < 2) return pc;  // undefined
    auto cos_of = [&](size_t i, size_t j) {
        double s = 0.0;
        for (size_t t = 0; t < unit[i].size(); ++t) s += unit[i][t] * unit[j][t];
        return s;
    };

    const size_t total = n * (n - 1) / 2;
    double sum = 0.0;
    if (sample_pairs >= total) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) sum += cos_of(i, j);
        pc.pairs = total;
        pc.exhaustive = true;
    } else {
        Rng rng(seed);
        for (size_t k = 0; k < sample_pairs; ++k) {
            const size_t i = rng.below(n);
            size_t j = rng.below(n - 1);
            if (j >= i) ++j;
            sum += cos_of(i, j);
        }
        pc.pairs = sample_pairs;
    }
    pc.mean = sum / static_cast<double>(pc.pairs);
    pc.defined = true;
    return pc;
}

}  // namespace defemb
