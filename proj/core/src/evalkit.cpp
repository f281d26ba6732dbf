#include "defemb/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "defemb/error.hpp"
#include "defemb/io_util.hpp"
#include "defemb/model.hpp"

namespace defemb {

// ---------------------------------------------------------------------------
// spearman

namespace {

// 1-based average ranks; tied values share the mean of their rank run
std::vector<double> average_ranks(const std::vector<double>& xs) {
    const size_t n = xs.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i + 1;
        while (j < n && xs[idx[j]] == xs[idx[i]]) ++j;
        const double mean_rank = (double(i + 1) + double(j)) / 2.0;
        for (size_t k = i; k < j; ++k) ranks[idx[k]] = mean_rank;
        i = j;
    }
    return ranks;
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw Error::usage("spearman: length mismatch (" + std::to_string(xs.size()) + " vs " +
                           std::to_string(ys.size()) + ")");
    if (xs.empty()) throw Error::usage("spearman: empty input");

    SpearmanResult res;
    if (xs.size() < 2) return res;  // a single pair has no rank variance

    const std::vector<double> rx = average_ranks(xs);
    const std::vector<double> ry = average_ranks(ys);
    const double n = double(rx.size());
    double sx = 0, sy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sx += rx[i];
        sy += ry[i];
    }
    const double mx = sx / n, my = sy / n;
    double cxy = 0, cxx = 0, cyy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        const double a = rx[i] - mx, b = ry[i] - my;
        cxy += a * b;
        cxx += a * a;
        cyy += b * b;
    }
    if (cxx == 0.0 || cyy == 0.0) return res;  // constant input: undefined
    res.rho = cxy / std::sqrt(cxx * cyy);
    res.defined = true;
    return res;
}

// ---------------------------------------------------------------------------
// word similarity

std::vector<SimilarityTriple> load_similarity_tsv(const std::string& path) {
    std::vector<SimilarityTriple> out;
    const std::vector<std::string> lines = read_lines(path);
    for (size_t li = 0; li < lines.size(); ++li) {
        const std::string& line = lines[li];
        if (line.empty()) continue;
        auto fail = [&](const std::string& why) -> Error {
            return Error::runtime(path + ":" + std::to_string(li + 1) + ": " + why);
        };
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw fail("want word_a<TAB>word_b<TAB>score");
        if (line.find('\t', t2 + 1) != std::string::npos) throw fail("too many fields");
        SimilarityTriple t;
        t.word_a = line.substr(0, t1);
        t.word_b = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string score = line.substr(t2 + 1);
        if (t.word_a.empty() || t.word_b.empty()) throw fail("empty word");
        size_t used = 0;
        try {
            t.gold = std::stod(score, &used);
        } catch (const std::exception&) {
            throw fail("bad score '" + score + "'");
        }
        if (used != score.size()) throw fail("bad score '" + score + "'");
        if (!std::isfinite(t.gold)) throw fail("score not finite");
        out.push_back(std::move(t));
    }
    return out;
}

WordSimilarityReport word_similarity_eval(const EmbeddingMatrix& E, const Tokenizer& tok,
                                          const std::vector<SimilarityTriple>& ds,
                                          SimilarityMetric metric) {
    if (ds.empty()) throw Error::usage("word_similarity_eval: empty dataset");

    // sum of the token embeddings of " " + word; empty result means a token
    // fell outside E
    auto embed = [&](const std::string& word, std::vector<double>& v) -> bool {
        v.assign(E.cols, 0.0);
        for (int id : tok.encode(" " + word)) {
            if (id < 0 || uint32_t(id) >= E.rows) return false;
            const float* row = E.row(uint32_t(id));
            for (uint32_t j = 0; j < E.cols; ++j) v[j] += double(row[j]);
        }
        return true;
    };

    WordSimilarityReport rep;
    std::vector<double> va, vb;
    for (size_t i = 0; i < ds.size(); ++i) {
        if (!embed(ds[i].word_a, va) || !embed(ds[i].word_b, vb)) {
            rep.skipped.push_back({i, "token id outside the embedding matrix"});
            continue;
        }
        double dot = 0, na = 0, nb = 0;
        for (uint32_t j = 0; j < E.cols; ++j) {
            dot += va[j] * vb[j];
            na += va[j] * va[j];
            nb += vb[j] * vb[j];
        }
        double s = dot;
        if (metric == SimilarityMetric::cosine) {
            if (na == 0.0 || nb == 0.0) {
                rep.skipped.push_back({i, "zero-norm word embedding under cosine"});
                continue;
            }
            s = dot / std::sqrt(na * nb);
        }
        rep.predicted.push_back(s);
        rep.gold.push_back(ds[i].gold);
        rep.used.push_back(i);
    }
    if (rep.predicted.size() >= 2) rep.correlation = spearman(rep.predicted, rep.gold);
    return rep;
}

// ---------------------------------------------------------------------------
// MSE distribution

MseDistribution mse_distribution(const EmbeddingMatrix& pre, const EmbeddingMatrix& def,
                                 std::vector<double> bin_edges, std::vector<size_t> band_edges,
                                 const std::vector<int>& rank_of) {
    if (pre.rows != def.rows || pre.cols != def.cols)
        throw Error::runtime("mse_distribution: shape mismatch (" + std::to_string(pre.rows) +
                             "×" + std::to_string(pre.cols) + " vs " + std::to_string(def.rows) +
                             "×" + std::to_string(def.cols) + ")");
    auto check_edges = [](const auto& edges, const char* what) {
        if (edges.empty()) throw Error::usage(std::string(what) + ": need at least one edge");
        if (double(edges.front()) != 0.0)
            throw Error::usage(std::string(what) + ": first edge must be 0");
        for (size_t i = 1; i < edges.size(); ++i)
            if (!(double(edges[i - 1]) < double(edges[i])))
                throw Error::usage(std::string(what) + ": edges must ascend strictly");
    };
    check_edges(bin_edges, "mse_distribution bins");
    check_edges(band_edges, "mse_distribution bands");
    if (!rank_of.empty() && rank_of.size() != pre.rows)
        throw Error::usage("mse_distribution: rank_of size does not match the matrix");

    MseDistribution d;
    d.bin_edges = std::move(bin_edges);
    d.band_edges = std::move(band_edges);
    d.counts.assign(d.bin_edges.size(), 0);
    d.band_counts.assign(d.band_edges.size(), std::vector<size_t>(d.bin_edges.size(), 0));
    d.mse.resize(pre.rows);

    for (uint32_t r = 0; r < pre.rows; ++r) {
        const float* a = pre.row(r);
        const float* b = def.row(r);
        double s = 0.0;
        for (uint32_t j = 0; j < pre.cols; ++j) {
            const double diff = double(a[j]) - double(b[j]);
            s += diff * diff;
        }
        d.mse[r] = s;
        const size_t bin =
            size_t(std::upper_bound(d.bin_edges.begin(), d.bin_edges.end(), s) -
                   d.bin_edges.begin()) - 1;
        const size_t rank = rank_of.empty() ? size_t(r) : size_t(rank_of[r]);
        const size_t band =
            size_t(std::upper_bound(d.band_edges.begin(), d.band_edges.end(), rank) -
                   d.band_edges.begin()) - 1;
        ++d.counts[bin];
        ++d.band_counts[band][bin];
    }
    d.cumulative_ratio.resize(d.counts.size());
    size_t acc = 0;
    for (size_t i = 0; i < d.counts.size(); ++i) {
        acc += d.counts[i];
        d.cumulative_ratio[i] = pre.rows == 0 ? 0.0 : double(acc) / double(pre.rows);
    }
    return d;
}

// ---------------------------------------------------------------------------
// probing classifier

namespace {

void probe_forward(const ProbeParams& p, const float* x, std::vector<double>& hidden,
                   std::vector<double>& logits) {
    const size_t d = p.w1.cols;
    hidden.assign(p.w1.rows, 0.0);
    for (size_t i = 0; i < p.w1.rows; ++i) {
        double s = double(p.b1[0][i]);
        const float* wi = p.w1[i];
        for (size_t j = 0; j < d; ++j) s += double(wi[j]) * double(x[j]);
        hidden[i] = std::tanh(s);
    }
    logits.assign(size_t(kProbeClasses), 0.0);
    for (size_t c = 0; c < size_t(kProbeClasses); ++c) {
        double s = double(p.b2[0][c]);
        const float* wc = p.w2[c];
        for (size_t i = 0; i < hidden.size(); ++i) s += double(wc[i]) * hidden[i];
        logits[c] = s;
    }
}

void softmax_inplace(std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double denom = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        denom += x;
    }
    for (double& x : v) x /= denom;
}

}  // namespace

ProbeParams train_probe(const std::vector<ProbeExample>& train, const ProbeTrainConfig& cfg,
                        uint64_t seed) {
    if (train.empty()) throw Error::usage("probe: empty training set");
    if (cfg.steps <= 0 || cfg.batch <= 0) throw Error::usage("probe: steps and batch must be positive");
    const size_t d = train[0].state.size();
    if (d == 0) throw Error::usage("probe: zero-width states");
    std::array<size_t, kProbeClasses> class_counts{};
    for (const ProbeExample& ex : train) {
        if (ex.state.size() != d) throw Error::runtime("probe: inconsistent state widths");
        if (ex.label < 0 || ex.label >= kProbeClasses)
            throw Error::runtime("probe: label " + std::to_string(ex.label) + " outside 0.." +
                                 std::to_string(kProbeClasses - 1));
        ++class_counts[size_t(ex.label)];
    }
    const int present = int(std::count_if(class_counts.begin(), class_counts.end(),
                                          [](size_t c) { return c > 0; }));
    if (present < 2) throw Error::usage("probe: training set holds a single class");

    Rng rng(seed);
    ProbeParams p{Mat<float>(d, d), Mat<float>(1, d), Mat<float>(size_t(kProbeClasses), d),
                  Mat<float>(1, size_t(kProbeClasses))};
    for (float& x : p.w1.a) x = float(0.02 * rng.normal());
    for (float& x : p.w2.a) x = float(0.02 * rng.normal());

    // plain Adam, constant learning rate
    std::array<Mat<float>*, 4> tensors{&p.w1, &p.b1, &p.w2, &p.b2};
    std::array<std::vector<double>, 4> m, v;
    for (size_t t = 0; t < 4; ++t) {
        m[t].assign(tensors[t]->size(), 0.0);
        v[t].assign(tensors[t]->size(), 0.0);
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    std::vector<double> hidden, logits;
    std::array<Mat<float>, 4> g{Mat<float>(d, d), Mat<float>(1, d),
                                Mat<float>(size_t(kProbeClasses), d),
                                Mat<float>(1, size_t(kProbeClasses))};
    for (int step = 1; step <= cfg.steps; ++step) {
        for (auto& gt : g) gt.zero();
        const double w = 1.0 / double(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b) {
            const ProbeExample& ex = train[rng.below(train.size())];
            probe_forward(p, ex.state.data(), hidden, logits);
            softmax_inplace(logits);
            std::vector<double> dh(d, 0.0);
            for (size_t c = 0; c < size_t(kProbeClasses); ++c) {
                const double dl = (logits[c] - (int(c) == ex.label ? 1.0 : 0.0)) * w;
                g[3][0][c] += float(dl);
                for (size_t i = 0; i < d; ++i) {
                    g[2][c][i] += float(dl * hidden[i]);
                    dh[i] += dl * double(p.w2[c][i]);
                }
            }
            for (size_t i = 0; i < d; ++i) {
                const double dpre = dh[i] * (1.0 - hidden[i] * hidden[i]);
                g[1][0][i] += float(dpre);
                for (size_t j = 0; j < d; ++j) g[0][i][j] += float(dpre * double(ex.state[j]));
            }
        }
        const double bc1 = 1.0 - std::pow(beta1, double(step));
        const double bc2 = 1.0 - std::pow(beta2, double(step));
        for (size_t t = 0; t < 4; ++t) {
            Mat<float>& w_t = *tensors[t];
            for (size_t i = 0; i < w_t.size(); ++i) {
                const double gi = double(g[t].a[i]);
                m[t][i] = beta1 * m[t][i] + (1.0 - beta1) * gi;
                v[t][i] = beta2 * v[t][i] + (1.0 - beta2) * gi * gi;
                w_t.a[i] = float(double(w_t.a[i]) -
                                 cfg.lr * (m[t][i] / bc1) / (std::sqrt(v[t][i] / bc2) + eps));
            }
        }
    }
    return p;
}

int probe_predict(const ProbeParams& p, const std::vector<float>& state) {
    if (state.size() != p.w1.cols) throw Error::runtime("probe: state width mismatch");
    std::vector<double> hidden, logits;
    probe_forward(p, state.data(), hidden, logits);
    return int(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double probe_accuracy(const ProbeParams& p, const std::vector<ProbeExample>& test) {
    if (test.empty()) throw Error::usage("probe: empty test set");
    size_t hit = 0;
    for (const ProbeExample& ex : test)
        if (probe_predict(p, ex.state) == ex.label) ++hit;
    return double(hit) / double(test.size());
}

// ---------------------------------------------------------------------------
// dynamics harness

std::vector<int> zipf_stream(int first_id, int n, double exponent, int len, Rng& rng) {
    if (n <= 0 || len < 0) throw Error::usage("zipf_stream: need a positive vocabulary");
    std::vector<double> cdf(static_cast<size_t>(n), 0.0);
    double acc = 0.0;
    for (int r = 0; r < n; ++r) {
        acc += std::pow(double(r + 1), -exponent);
        cdf[size_t(r)] = acc;
    }
    std::vector<int> out(static_cast<size_t>(len), 0);
    for (int i = 0; i < len; ++i) {
        const double u = rng.uniform() * acc;
        const size_t r =
            size_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        out[size_t(i)] = first_id + int(std::min(r, size_t(n - 1)));
    }
    return out;
}

namespace {

constexpr int kDynMask = 0;  // reserved mask id in the synthetic vocabulary

constexpr uint64_t kRefStreamSalt = 0x852c5a6e3f19d2b7ull;
constexpr uint64_t kTaskStreamSalt = 0xc3a5c85c97cb3127ull;
constexpr uint64_t kPretrainSalt = 0x2545f4914f6cdd1dull;
constexpr uint64_t kFinetuneSalt = 0x9e6c63d0876a9a4full;

EmbeddingMatrix snapshot_embedding(const Params<float>& params) {
    const Mat<float>& E = params.tok_emb;
    EmbeddingMatrix out(uint32_t(E.rows), uint32_t(E.cols));
    std::memcpy(out.data.data(), E.a.data(), sizeof(float) * E.size());
    return out;
}

// one masked-LM step over windows of the raw-id stream
double dynamics_step(Params<float>& params, OptimizerState& opt, const std::vector<int>& stream,
                     const DynamicsConfig& cfg, Rng& rng) {
    const size_t starts = stream.size() - size_t(cfg.seq_len) + 1;
    std::vector<Example<float>> batch;
    batch.reserve(size_t(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
        const size_t s0 = size_t(rng.below(starts));
        Example<float> ex;
        ex.src.assign(stream.begin() + long(s0), stream.begin() + long(s0) + cfg.seq_len);
        do {
            ex.positions.clear();
            for (size_t i = 0; i < ex.src.size(); ++i)
                if (rng.bernoulli(cfg.select_prob)) ex.positions.push_back(i);
        } while (ex.positions.empty());
        for (size_t pos : ex.positions) {
            ex.target_ids.push_back(ex.src[pos]);
            const double u = rng.uniform();
            if (u < 0.8)
                ex.src[pos] = kDynMask;
            else if (u < 0.9)
                ex.src[pos] = 1 + int(rng.below(uint64_t(cfg.vocab - 1)));
            // else keep
        }
        batch.push_back(std::move(ex));
    }
    LossResult<float> lr = loss_and_grads(params, batch, Objective::cross_entropy);
    adam_step(params, lr.grads, opt);
    return lr.loss;
}

DynamicsSnapshot take_snapshot(int step, const Params<float>& params, const EmbeddingMatrix& E0,
                               const GroupAssignment& groups,
                               const std::vector<int>& appearing_ids, uint64_t seed) {
    DynamicsSnapshot s;
    s.step = step;
    s.embedding = snapshot_embedding(params);
    const IsotropyBreakdown iso = isotropy(s.embedding);
    s.isotropy_score = iso.score;
    s.isotropy_degenerate = iso.degenerate_spectrum;
    s.drift = drift_stats(E0, s.embedding, groups);
    s.appearing_cosine = mean_pairwise_cosine(s.embedding, appearing_ids, 2000, seed);
    s.projection = svd_project2d(s.embedding).points;
    return s;
}

}  // namespace

DynamicsResult dynamics_run(const DynamicsConfig& cfg) {
    if (cfg.snapshot_every < 1) throw Error::usage("dynamics: snapshot_every must be >= 1");
    if (cfg.vocab < 8) throw Error::usage("dynamics: vocabulary too small");
    if (cfg.appearing < 1 || cfg.appearing >= cfg.vocab)
        throw Error::usage("dynamics: appearing must lie in [1, vocab)");
    if (cfg.steps < 0 || cfg.pretrain_steps < 0) throw Error::usage("dynamics: negative steps");
    if (cfg.corpus_len < cfg.seq_len) throw Error::usage("dynamics: corpus shorter than seq_len");
    if (cfg.select_prob <= 0.0 || cfg.select_prob >= 1.0)
        throw Error::usage("dynamics: select_prob must lie in (0, 1)");

    // streams: the reference stream defines pretraining frequencies; the task
    // stream reaches only the truncated sub-vocabulary
    Rng ref_rng(cfg.seed ^ kRefStreamSalt);
    const std::vector<int> ref_stream =
        zipf_stream(1, cfg.vocab - 1, cfg.zipf_exponent, cfg.corpus_len, ref_rng);
    Rng task_rng(cfg.seed ^ kTaskStreamSalt);
    const std::vector<int> task_stream =
        zipf_stream(1, cfg.appearing, cfg.zipf_exponent, cfg.corpus_len, task_rng);

    DynamicsResult res;
    {
        std::vector<VocabEntry> entries(size_t(cfg.vocab));
        for (int id = 0; id < cfg.vocab; ++id) {
            entries[size_t(id)].id = id;
            entries[size_t(id)].token = "tok" + std::to_string(id);
        }
        for (int id : ref_stream) ++entries[size_t(id)].count;
        res.vocab = rank_by_frequency(std::move(entries));
    }
    std::vector<uint64_t> task_counts(size_t(cfg.vocab), 0);
    for (int id : task_stream) ++task_counts[size_t(id)];
    res.groups = assign_groups(res.vocab, task_counts);

    std::vector<int> appearing_ids;
    for (int id = 0; id < cfg.vocab; ++id)
        if (task_counts[size_t(id)] > 0) appearing_ids.push_back(id);

    ModelConfig mc;
    mc.vocab_size = cfg.vocab;
    mc.h_e = cfg.h_e;
    mc.h_s = cfg.h_s;
    mc.layers = cfg.layers;
    mc.heads = cfg.heads;
    mc.ffn = cfg.ffn;
    mc.max_seq = cfg.seq_len;
    mc.mode = ModelMode::encoder;
    mc.tie_lm_head = cfg.weight_tying;
    Params<float> params = init_params<float>(mc, cfg.seed);

    if (cfg.init == DynamicsConfig::Init::pretrained) {
        OptimizerState opt = init_optimizer(params, cfg.base_lr, cfg.warmup);
        Rng rng(cfg.seed ^ kPretrainSalt);
        std::vector<double> trace;
        for (int step = 1; step <= cfg.pretrain_steps; ++step) {
            trace.push_back(dynamics_step(params, opt, ref_stream, cfg, rng));
            if (!std::isfinite(trace.back()))
                throw Error::runtime("dynamics: warm start diverged at step " +
                                     std::to_string(step));
        }
    }

    const EmbeddingMatrix E0 = snapshot_embedding(params);
    res.snapshots.push_back(take_snapshot(0, params, E0, res.groups, appearing_ids, cfg.seed));

    OptimizerState opt = init_optimizer(params, cfg.base_lr, cfg.warmup);
    Rng rng(cfg.seed ^ kFinetuneSalt);
    for (int step = 1; step <= cfg.steps; ++step) {
        const double loss = dynamics_step(params, opt, task_stream, cfg, rng);
        res.loss_trace.push_back(loss);
        if (!std::isfinite(loss))
            throw Error::runtime("dynamics: diverged (non-finite loss) at step " +
                                 std::to_string(step) + " of " + std::to_string(cfg.steps));
        if (step % cfg.snapshot_every == 0 || step == cfg.steps)
            res.snapshots.push_back(
                take_snapshot(step, params, E0, res.groups, appearing_ids, cfg.seed));
    }
    return res;
}

// ---------------------------------------------------------------------------
// report emitters

namespace {

std::string score_or_nan(const GroupIsotropy::Entry& e) {
    return e.defined ? format_double(e.score) : "nan";
}

const char* group_color(Group g) {
    switch (g) {
        case Group::frequent: return "#1f77b4";
        case Group::medium: return "#2ca02c";
        case Group::rare: return "#d62728";
        case Group::non_appearing: return "#9467bd";
    }
    return "#4682b4";
}

}  // namespace

void write_group_isotropy_csv(const GroupIsotropy& gi, std::ostream& out) {
    out << "group,score\n";
    out << "frequent," << score_or_nan(gi.frequent) << "\n";
    out << "medium," << score_or_nan(gi.medium) << "\n";
    out << "rare," << score_or_nan(gi.rare) << "\n";
    out << "all," << score_or_nan(gi.all) << "\n";
}

void write_projection_csv(const Projection2D& proj, const GroupAssignment* groups,
                          std::ostream& out) {
    out << "id,group,x,y\n";
    for (size_t i = 0; i < proj.points.size(); ++i) {
        const char* g = groups ? group_name(groups->group_of[i]) : "all";
        out << i << "," << g << "," << format_double(proj.points[i][0]) << ","
            << format_double(proj.points[i][1]) << "\n";
    }
}

void write_similarity_csv(const std::vector<SimilarityTriple>& ds,
                          const WordSimilarityReport& rep, std::ostream& out) {
    std::unordered_map<size_t, double> predicted;
    for (size_t k = 0; k < rep.used.size(); ++k) predicted[rep.used[k]] = rep.predicted[k];
    std::unordered_map<size_t, const std::string*> why;
    for (const auto& s : rep.skipped) why[s.index] = &s.reason;

    out << "word_a,word_b,predicted,gold,status\n";
    for (size_t i = 0; i < ds.size(); ++i) {
        out << ds[i].word_a << "," << ds[i].word_b << ",";
        auto it = predicted.find(i);
        if (it != predicted.end())
            out << format_double(it->second) << "," << format_double(ds[i].gold) << ",used\n";
        else
            out << "nan," << format_double(ds[i].gold) << ","
                << (why.count(i) ? *why[i] : std::string("skipped")) << "\n";
    }
}

void write_mse_distribution_csv(const MseDistribution& d, std::ostream& out) {
    out << "bin_lo,bin_hi,count,cumulative_ratio";
    for (size_t band = 0; band < d.band_edges.size(); ++band)
        out << ",band_" << d.band_edges[band];
    out << "\n";
    for (size_t i = 0; i < d.counts.size(); ++i) {
        out << format_double(d.bin_edges[i]) << ",";
        out << (i + 1 < d.bin_edges.size() ? format_double(d.bin_edges[i + 1]) : "inf");
        out << "," << d.counts[i] << "," << format_double(d.cumulative_ratio[i]);
        for (size_t band = 0; band < d.band_counts.size(); ++band)
            out << "," << d.band_counts[band][i];
        out << "\n";
    }
}

void write_dynamics_csv(const DynamicsResult& r, std::ostream& out) {
    out << "step,group,mean_displacement,mean_cosine,isotropy,appearing_mean_cosine\n";
    constexpr std::array<Group, 4> order{Group::frequent, Group::medium, Group::rare,
                                         Group::non_appearing};
    for (const DynamicsSnapshot& s : r.snapshots) {
        auto row = [&](const char* name, const DriftStats::Entry& e) {
            out << s.step << "," << name << "," << format_double(e.mean_displacement) << ","
                << (e.cosine_defined ? format_double(e.mean_cosine) : "nan") << ","
                << format_double(s.isotropy_score) << ","
                << (s.appearing_cosine.defined ? format_double(s.appearing_cosine.mean) : "nan")
                << "\n";
        };
        for (Group g : order) row(group_name(g), s.drift.of(g));
        row("all", s.drift.all);
    }
}

void write_scatter_svg(const Projection2D& proj, const GroupAssignment* groups,
                       std::ostream& out) {
    constexpr double kSize = 640.0, kMargin = 48.0;
    double lox = 0, hix = 0, loy = 0, hiy = 0;
    if (!proj.points.empty()) {
        lox = hix = proj.points[0][0];
        loy = hiy = proj.points[0][1];
        for (const auto& p : proj.points) {
            lox = std::min(lox, p[0]);
            hix = std::max(hix, p[0]);
            loy = std::min(loy, p[1]);
            hiy = std::max(hiy, p[1]);
        }
    }
    if (hix == lox) { lox -= 1.0; hix += 1.0; }
    if (hiy == loy) { loy -= 1.0; hiy += 1.0; }
    const double span = kSize - 2.0 * kMargin;
    auto sx = [&](double x) { return kMargin + (x - lox) / (hix - lox) * span; };
    auto sy = [&](double y) { return kSize - kMargin - (y - loy) / (hiy - loy) * span; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" "
           "viewBox=\"0 0 640 640\">\n";
    out << "  <rect x=\"0\" y=\"0\" width=\"640\" height=\"640\" fill=\"white\"/>\n";
    out << "  <rect x=\"" << format_double(kMargin) << "\" y=\"" << format_double(kMargin)
        << "\" width=\"" << format_double(span) << "\" height=\"" << format_double(span)
        << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    for (size_t i = 0; i < proj.points.size(); ++i) {
        const char* color =
            groups ? group_color(groups->group_of[i]) : "#4682b4";
        out << "  <circle cx=\"" << format_double(sx(proj.points[i][0])) << "\" cy=\""
            << format_double(sy(proj.points[i][1])) << "\" r=\"3\" fill=\"" << color
            << "\" fill-opacity=\"0.7\"/>\n";
    }
    out << "</svg>\n";
}

}  // namespace defemb
