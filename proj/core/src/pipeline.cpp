#include "defemb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "defemb/error.hpp"
#include "defemb/io_util.hpp"
#include "defemb/rng.hpp"

namespace defemb {

namespace {

// salt separating init randomness from training randomness
constexpr uint64_t kTrainSalt = 0x9e3779b97f4a7c15ull;
constexpr uint64_t kMimicHeadSalt = 0x6a09e667f3bcc908ull;

std::string trace_tail(const std::vector<double>& trace, size_t n = 10) {
    std::ostringstream os;
    const size_t begin = trace.size() > n ? trace.size() - n : 0;
    for (size_t i = begin; i < trace.size(); ++i) {
        if (i > begin) os << " ";
        os << trace[i];
    }
    return os.str();
}

[[noreturn]] void throw_divergence(const char* what, int step, const std::vector<double>& trace) {
    throw Error::runtime(std::string(what) + " diverged (non-finite loss) at step " +
                         std::to_string(step) + "; recent losses: " + trace_tail(trace));
}

int random_non_special(const Tokenizer& tok, Rng& rng) {
    return tok.byte_base() + int(rng.below(uint64_t(tok.vocab_size() - tok.byte_base())));
}

// iid Bernoulli selection over [0, n), redrawn until nonempty
std::vector<size_t> select_positions(size_t n, double p, Rng& rng) {
    std::vector<size_t> sel;
    do {
        sel.clear();
        for (size_t i = 0; i < n; ++i)
            if (rng.bernoulli(p)) sel.push_back(i);
    } while (sel.empty());
    return sel;
}

Example<float> make_mlm_example(const std::vector<int>& window, const Tokenizer& tok, double p,
                                Rng& rng) {
    Example<float> ex;
    ex.src = window;
    ex.positions = select_positions(window.size(), p, rng);
    ex.target_ids.reserve(ex.positions.size());
    for (size_t pos : ex.positions) {
        ex.target_ids.push_back(window[pos]);
        const double u = rng.uniform();
        if (u < 0.8)
            ex.src[pos] = Tokenizer::kMask;
        else if (u < 0.9)
            ex.src[pos] = random_non_special(tok, rng);
        // else keep
    }
    return ex;
}

Example<float> make_denoise_example(const std::vector<int>& window, const Tokenizer& tok,
                                    double p, Rng& rng) {
    const std::vector<size_t> sel = select_positions(window.size(), p, rng);
    // consecutive selected positions form one span; cap at the sentinel budget
    std::vector<std::pair<size_t, size_t>> spans;  // (start, len)
    for (size_t i = 0; i < sel.size();) {
        size_t j = i + 1;
        while (j < sel.size() && sel[j] == sel[j - 1] + 1) ++j;
        spans.emplace_back(sel[i], j - i);
        i = j;
    }
    if (spans.size() > size_t(tok.num_sentinels())) spans.resize(size_t(tok.num_sentinels()));

    Example<float> ex;
    std::vector<int> target;
    size_t next = 0;  // next span index
    for (size_t i = 0; i < window.size();) {
        if (next < spans.size() && i == spans[next].first) {
            const int sent = tok.sentinel_id(int(next) + 1);
            ex.src.push_back(sent);
            for (size_t k = 0; k < spans[next].second; ++k) {
                target.push_back(sent);
                target.push_back(window[i + k]);
            }
            i += spans[next].second;
            ++next;
        } else {
            ex.src.push_back(window[i]);
            ++i;
        }
    }
    ex.dec_in.reserve(target.size());
    ex.dec_in.push_back(Tokenizer::kBos);
    ex.dec_in.insert(ex.dec_in.end(), target.begin(), target.end() - 1);
    ex.positions.resize(target.size());
    std::iota(ex.positions.begin(), ex.positions.end(), size_t(0));
    ex.target_ids = std::move(target);
    return ex;
}

}  // namespace

double smoothed_mean(const std::vector<double>& xs, size_t begin, size_t count) {
    if (count == 0 || begin + count > xs.size())
        throw Error::usage("smoothed_mean: window [" + std::to_string(begin) + ", +" +
                           std::to_string(count) + ") out of range for " +
                           std::to_string(xs.size()) + " entries");
    double s = 0.0;
    for (size_t i = begin; i < begin + count; ++i) s += xs[i];
    return s / double(count);
}

TrainResult pretrain_toy_plm(const std::string& corpus, const Tokenizer& tok,
                             const PretrainConfig& cfg, int steps, uint64_t seed) {
    if (steps < 0) throw Error::usage("pretrain: steps must be >= 0");
    if (cfg.batch <= 0 || cfg.seq_len <= 0) throw Error::usage("pretrain: batch and seq_len must be positive");
    if (cfg.seq_len > cfg.max_seq)
        throw Error::usage("pretrain: seq_len exceeds max_seq");
    if (cfg.select_prob <= 0.0 || cfg.select_prob >= 1.0)
        throw Error::usage("pretrain: select_prob must lie in (0, 1)");

    const std::vector<int> stream = tok.encode(corpus);
    if (stream.empty()) throw Error::runtime("pretrain: corpus tokenizes to nothing");
    if (stream.size() < size_t(cfg.seq_len))
        throw Error::runtime("pretrain: corpus has " + std::to_string(stream.size()) +
                             " tokens, shorter than seq_len " + std::to_string(cfg.seq_len));

    ModelConfig mc;
    mc.vocab_size = tok.vocab_size();
    mc.h_e = cfg.h_e;
    mc.h_s = cfg.h_s;
    mc.layers = cfg.layers;
    mc.heads = cfg.heads;
    mc.ffn = cfg.ffn;
    mc.max_seq = cfg.max_seq;
    mc.mode = cfg.mode;
    mc.tie_lm_head = cfg.tie_lm_head;

    TrainResult res{init_params<float>(mc, seed), {}};
    if (steps == 0) return res;

    OptimizerState opt = init_optimizer(res.params, cfg.base_lr, cfg.warmup);
    Rng rng(seed ^ kTrainSalt);
    const size_t starts = stream.size() - size_t(cfg.seq_len) + 1;

    for (int step = 1; step <= steps; ++step) {
        std::vector<Example<float>> batch;
        batch.reserve(size_t(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const size_t s0 = size_t(rng.below(starts));
            std::vector<int> window(stream.begin() + long(s0),
                                    stream.begin() + long(s0) + cfg.seq_len);
            batch.push_back(cfg.mode == ModelMode::encoder
                                ? make_mlm_example(window, tok, cfg.select_prob, rng)
                                : make_denoise_example(window, tok, cfg.select_prob, rng));
        }
        LossResult<float> lr = loss_and_grads(res.params, batch, Objective::cross_entropy);
        res.loss_trace.push_back(lr.loss);
        if (!std::isfinite(lr.loss)) throw_divergence("pretraining", step, res.loss_trace);
        adam_step(res.params, lr.grads, opt);
    }
    return res;
}

Params<float> add_mimic_head(const Params<float>& plm, uint64_t seed) {
    Params<float> m = plm;
    m.cfg.mimic_head = true;
    m.mimic_w = Mat<float>(size_t(m.cfg.h_e), size_t(m.cfg.h_s));
    Rng rng(seed ^ kMimicHeadSalt);
    for (float& x : m.mimic_w.a) x = float(0.02 * rng.normal());
    return m;
}

namespace {

Example<float> mimic_example(const Params<float>& model, const Prompt& p, const Tokenizer& tok,
                             uint64_t corrupt_seed) {
    Example<float> ex;
    const Mat<float>& E = model.tok_emb;
    auto target_row = [&](int id) {
        return std::vector<float>(E[size_t(id)], E[size_t(id)] + E.cols);
    };
    if (model.cfg.mode == ModelMode::encoder) {
        const CorruptedPrompt c = corrupt_bert(p, tok, corrupt_seed, BertPhase::train).front();
        ex.src = c.source_ids;
        ex.positions = map_positions(c);
        for (size_t pos : c.kappa) ex.target_vecs.push_back(target_row(p.token_ids[pos]));
    } else {
        const CorruptedPrompt c = corrupt_t5(p, tok, corrupt_seed);
        ex.src = c.source_ids;
        ex.dec_in.push_back(Tokenizer::kBos);
        ex.dec_in.insert(ex.dec_in.end(), c.target_ids.begin(), c.target_ids.end() - 1);
        ex.positions = map_positions(c);
        for (size_t k = 0; k < c.kappa.size(); ++k)
            ex.target_vecs.push_back(target_row(c.target_ids[2 * k + 1]));
    }
    return ex;
}

}  // namespace

TrainResult train_mimic(const Params<float>& plm, const std::vector<Prompt>& prompts,
                        const Tokenizer& tok, const MimicConfig& cfg, int steps, uint64_t seed) {
    if (prompts.empty()) throw Error::usage("mimic: no prompts to train on");
    if (steps < 0) throw Error::usage("mimic: steps must be >= 0");
    if (cfg.batch <= 0) throw Error::usage("mimic: batch must be positive");

    TrainResult res{add_mimic_head(plm, seed), {}};
    if (steps == 0) return res;

    OptimizerState opt = init_optimizer(res.params, cfg.base_lr, cfg.warmup);
    opt.frozen.insert("tok_emb.weight");
    if (cfg.freeze_body) {
        visit_tensors(res.params, [&](const std::string& name, const Mat<float>&) {
            if (name != "mimic_w.weight") opt.frozen.insert(name);
        });
    }

    Rng rng(seed ^ kTrainSalt);
    for (int step = 1; step <= steps; ++step) {
        std::vector<Example<float>> batch;
        batch.reserve(size_t(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const Prompt& p = prompts[rng.below(prompts.size())];
            batch.push_back(mimic_example(res.params, p, tok, rng.next_u64()));
        }
        LossResult<float> lr = loss_and_grads(res.params, batch, Objective::mimic_mse);
        res.loss_trace.push_back(lr.loss);
        if (!std::isfinite(lr.loss)) throw_divergence("mimic training", step, res.loss_trace);
        adam_step(res.params, lr.grads, opt);
    }
    return res;
}

WordReconstruction reconstruct(const Params<float>& defemb, const Prompt& prompt,
                               const Tokenizer& tok) {
    if (!defemb.cfg.mimic_head) throw Error::runtime("reconstruct: model has no mimic head");
    const Span word_slot = prompt.spans[0];
    if (word_slot.length == 0) throw Error::runtime("reconstruct: prompt has an empty word slot");

    WordReconstruction out;
    {
        const std::vector<int> slot_ids(prompt.token_ids.begin() + long(word_slot.start),
                                        prompt.token_ids.begin() +
                                            long(word_slot.start + word_slot.length));
        out.token_ids = slot_ids;
        std::string text = tok.decode(slot_ids);
        if (!text.empty() && text.front() == ' ') text.erase(text.begin());
        out.word = text;
    }

    if (defemb.cfg.mode == ModelMode::encoder) {
        // one single-mask pass per word-slot token
        std::vector<std::pair<size_t, std::vector<float>>> got;
        for (const CorruptedPrompt& c : corrupt_bert(prompt, tok, 0, BertPhase::infer)) {
            const size_t pos = c.kappa.front();
            if (pos < word_slot.start || pos >= word_slot.start + word_slot.length) continue;
            const ForwardStates<float> fs = forward_states(defemb, c.source_ids);
            got.emplace_back(pos, mimic_predict(defemb, fs.enc[pos]));
        }
        std::sort(got.begin(), got.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto& [pos, v] : got) out.vectors.push_back(std::move(v));
    } else {
        // one denoising pass; the word slot is the first span, so its tokens
        // are the first K corrupted positions
        const CorruptedPrompt c = corrupt_t5(prompt, tok, 0);
        std::vector<int> dec_in;
        dec_in.push_back(Tokenizer::kBos);
        dec_in.insert(dec_in.end(), c.target_ids.begin(), c.target_ids.end() - 1);
        const ForwardStates<float> fs = forward_states(defemb, c.source_ids, dec_in);
        const std::vector<size_t> positions = map_positions(c);
        for (size_t k = 0; k < word_slot.length; ++k)
            out.vectors.push_back(mimic_predict(defemb, fs.dec[positions[k]]));
    }

    if (out.vectors.size() != word_slot.length)
        throw Error::runtime("reconstruct: expected " + std::to_string(word_slot.length) +
                             " word-slot vectors, got " + std::to_string(out.vectors.size()));
    return out;
}

Reconstructions build_reconstruction_bank(const Params<float>& defemb,
                                          const std::vector<Prompt>& prompts,
                                          const Tokenizer& tok) {
    Reconstructions bank;
    for (const Prompt& p : prompts) {
        WordReconstruction rec = reconstruct(defemb, p, tok);
        for (size_t k = 0; k < rec.token_ids.size(); ++k) {
            const int id = rec.token_ids[k];
            auto [it, fresh] = bank.by_token.try_emplace(id);
            if (fresh) it->second.assign(rec.vectors[k].size(), 0.0f);
            if (it->second.size() != rec.vectors[k].size())
                throw Error::runtime("reconstruction bank: width mismatch for token " +
                                     std::to_string(id));
            for (size_t j = 0; j < it->second.size(); ++j) it->second[j] += rec.vectors[k][j];
            ++bank.occurrences[id];
        }
    }
    for (auto& [id, sum] : bank.by_token) {
        const float n = float(bank.occurrences[id]);
        for (float& x : sum) x /= n;
    }
    return bank;
}

ReplacementPlan build_replacement_plan(const Vocabulary& vocab, const std::vector<int>& task_ids,
                                       const ReplacementConfig& cfg,
                                       const ReplacementSession& session) {
    if (cfg.alpha < 0.0 || cfg.alpha > 100.0)
        throw Error::usage("plan: alpha must lie in [0, 100], got " + std::to_string(cfg.alpha));
    if (cfg.min_index_for_top < 0) throw Error::usage("plan: min_index_for_top must be >= 0");
    {
        std::unordered_set<int> seen;
        for (int id : task_ids) {
            if (id < 0 || size_t(id) >= vocab.size())
                throw Error::runtime("plan: task id " + std::to_string(id) + " out of range");
            if (!seen.insert(id).second)
                throw Error::runtime("plan: duplicate task id " + std::to_string(id));
        }
    }

    ReplacementPlan plan;
    plan.target_count =
        std::min(size_t(std::floor(cfg.alpha / 100.0 * double(vocab.size()))), task_ids.size());

    std::vector<int> candidates;
    switch (cfg.strategy) {
        case ReplacementStrategy::last:
            candidates.assign(task_ids.rbegin(), task_ids.rend());
            break;
        case ReplacementStrategy::random: {
            Rng rng(cfg.seed);
            for (size_t idx : rng.sample_without_replacement(task_ids.size(), task_ids.size()))
                candidates.push_back(task_ids[idx]);
            break;
        }
        case ReplacementStrategy::top:
            for (int id : task_ids)
                if (vocab.rank_of[size_t(id)] >= cfg.min_index_for_top) candidates.push_back(id);
            break;
    }

    const std::unordered_set<int> excluded(cfg.exclusions.begin(), cfg.exclusions.end());
    const size_t window = std::min(plan.target_count, candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (cfg.backfill ? plan.selected.size() >= plan.target_count : i >= window) break;
        const int id = candidates[i];
        if (excluded.count(id))
            plan.skipped.push_back({id, "excluded"});
        else if (session.replaced.count(id))
            plan.skipped.push_back({id, "already-replaced"});
        else
            plan.selected.push_back(id);
    }
    return plan;
}

ApplyResult apply_plan(EmbeddingMatrix& E, const ReplacementPlan& plan,
                       const Reconstructions& recon, ReplacementSession& session) {
    // validate everything before the first write
    std::string missing;
    for (int id : plan.selected) {
        if (id < 0 || uint32_t(id) >= E.rows)
            throw Error::runtime("apply: selected id " + std::to_string(id) +
                                 " outside the embedding matrix (" + std::to_string(E.rows) +
                                 " rows)");
        if (session.replaced.count(id)) continue;
        auto it = recon.by_token.find(id);
        if (it == recon.by_token.end()) {
            missing += (missing.empty() ? "" : ", ") + std::to_string(id);
        } else if (it->second.size() != size_t(E.cols)) {
            throw Error::runtime("apply: reconstruction for id " + std::to_string(id) + " has " +
                                 std::to_string(it->second.size()) + " dims, embedding has " +
                                 std::to_string(E.cols));
        }
    }
    if (!missing.empty())
        throw Error::runtime("apply: no reconstruction for selected ids: " + missing);

    ApplyResult res;
    for (int id : plan.selected) {
        if (!session.replaced.insert(id).second) {
            res.locked_ids.push_back(id);
            continue;
        }
        const std::vector<float>& v = recon.by_token.at(id);
        std::copy(v.begin(), v.end(), E.row(uint32_t(id)));
        res.replaced_ids.push_back(id);
    }
    return res;
}

void save_reconstructions(const Reconstructions& r, const std::string& path) {
    std::vector<int> ids;
    ids.reserve(r.by_token.size());
    for (const auto& [id, v] : r.by_token) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    std::string out;
    for (int id : ids) {
        nlohmann::ordered_json j;
        j["id"] = id;
        j["occurrences"] = r.occurrences.at(id);
        j["vector"] = r.by_token.at(id);
        out += j.dump();
        out += '\n';
    }
    write_text_file(path, out);
}

Reconstructions load_reconstructions(const std::string& path) {
    Reconstructions r;
    const std::vector<std::string> lines = read_lines(path);
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(lines[i]);
            const int id = j.at("id").get<int>();
            if (!r.by_token.emplace(id, j.at("vector").get<std::vector<float>>()).second)
                throw Error::runtime("duplicate id " + std::to_string(id));
            r.occurrences[id] = j.at("occurrences").get<size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw Error::runtime(path + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return r;
}

void save_plan(const ReplacementPlan& p, const std::string& path) {
    nlohmann::ordered_json j;
    j["target_count"] = p.target_count;
    j["selected"] = p.selected;
    nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
    for (const auto& s : p.skipped) {
        nlohmann::ordered_json e;
        e["id"] = s.id;
        e["reason"] = s.reason;
        skipped.push_back(std::move(e));
    }
    j["skipped"] = std::move(skipped);
    write_text_file(path, j.dump(2) + "\n");
}

ReplacementPlan load_plan(const std::string& path) {
    ReplacementPlan p;
    try {
        const nlohmann::json j = nlohmann::json::parse(read_text_file(path));
        p.target_count = j.at("target_count").get<size_t>();
        p.selected = j.at("selected").get<std::vector<int>>();
        for (const auto& e : j.at("skipped"))
            p.skipped.push_back({e.at("id").get<int>(), e.at("reason").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw Error::runtime("plan " + path + ": " + e.what());
    }
    return p;
}

void save_session(const ReplacementSession& s, const std::string& path) {
    std::vector<int> ids(s.replaced.begin(), s.replaced.end());
    std::sort(ids.begin(), ids.end());
    nlohmann::ordered_json j;
    j["replaced"] = ids;
    write_text_file(path, j.dump(2) + "\n");
}

ReplacementSession load_session(const std::string& path) {
    ReplacementSession s;
    try {
        const nlohmann::json j = nlohmann::json::parse(read_text_file(path));
        for (int id : j.at("replaced").get<std::vector<int>>()) s.replaced.insert(id);
    } catch (const nlohmann::json::exception& e) {
        throw Error::runtime("session " + path + ": " + e.what());
    }
    return s;
}

}  // namespace defemb
