// defemb — subcommand front-end wiring the library into reproducible runs.
//
// Every subcommand writes a run directory containing manifest.json (seed,
// effective config, input hashes, output paths) plus its reports/artifacts.
// Exit codes: 0 success, 1 runtime error, 2 usage error. --config points at a
// flat key=value file whose keys mirror the subcommand's long flags; explicit
// flags win, unknown keys are rejected. DEFEMB_SEED serves as a seed fallback.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "defemb/embedding.hpp"
#include "defemb/error.hpp"
#include "defemb/evalkit.hpp"
#include "defemb/geometry.hpp"
#include "defemb/io_util.hpp"
#include "defemb/manifest.hpp"
#include "defemb/model.hpp"
#include "defemb/pipeline.hpp"
#include "defemb/prompts.hpp"
#include "defemb/rng.hpp"
#include "defemb/tokenizer.hpp"
#include "defemb/vocab.hpp"

namespace {

using namespace defemb;

// ---------------------------------------------------------------------------
// config file support: flat key=value lines, keys mirror the long flags of
// the chosen subcommand, command-line flags take precedence

std::map<std::string, std::string> load_config_file(const std::string& path) {
    std::map<std::string, std::string> kv;
    const std::vector<std::string> lines = read_lines(path);
    const auto notspace = [](unsigned char c) { return std::isspace(c) == 0; };
    for (size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        if (const size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw Error::usage("config " + where + ": want key = value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        val.erase(val.begin(), std::find_if(val.begin(), val.end(), notspace));
        if (key.empty()) throw Error::usage("config " + where + ": empty key");
        if (!kv.emplace(key, val).second)
            throw Error::usage("config " + where + ": duplicate key '" + key + "'");
    }
    return kv;
}

template <class T>
T parse_scalar(const std::string& v, const std::string& key);

template <>
std::string parse_scalar<std::string>(const std::string& v, const std::string&) {
    return v;
}

template <>
bool parse_scalar<bool>(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error::usage("key '" + key + "' wants a boolean, got '" + v + "'");
}

template <class T>
T parse_scalar_number(const std::string& v, const std::string& key) {
    std::istringstream in(v);
    T out{};
    in >> out;
    if (!in || !in.eof()) throw Error::usage("key '" + key + "' cannot parse '" + v + "'");
    return out;
}

template <>
int parse_scalar<int>(const std::string& v, const std::string& key) {
    return parse_scalar_number<int>(v, key);
}
template <>
double parse_scalar<double>(const std::string& v, const std::string& key) {
    return parse_scalar_number<double>(v, key);
}
template <>
uint64_t parse_scalar<uint64_t>(const std::string& v, const std::string& key) {
    return parse_scalar_number<uint64_t>(v, key);
}

// ties a subcommand's flags to config-file keys so --config can set anything a
// flag can, with explicit flags winning
struct Binder {
    CLI::App* sub = nullptr;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    std::map<std::string, CLI::Option*> options;

    template <class T>
    CLI::Option* option(const std::string& name, T& ref, const std::string& desc) {
        CLI::Option* opt = sub->add_option("--" + name, ref, desc);
        setters[name] = [&ref, name](const std::string& v) { ref = parse_scalar<T>(v, name); };
        options[name] = opt;
        return opt;
    }

    CLI::Option* flag(const std::string& name, bool& ref, const std::string& desc) {
        CLI::Option* opt = sub->add_flag("--" + name, ref, desc);
        setters[name] = [&ref, name](const std::string& v) { ref = parse_scalar<bool>(v, name); };
        options[name] = opt;
        return opt;
    }

    void apply(const std::map<std::string, std::string>& cfg) const {
        for (const auto& [key, value] : cfg) {
            const auto it = setters.find(key);
            if (it == setters.end())
                throw Error::usage("config: unknown key '" + key + "' for subcommand '" +
                                   sub->get_name() + "'");
            if (options.at(key)->count() == 0) it->second(value);
        }
    }
};

// ---------------------------------------------------------------------------
// small shared helpers

std::string join_path(const std::string& dir, const std::string& leaf) {
    return dir + "/" + leaf;
}

void write_report(const std::string& path, const std::string& content, RunManifest& man) {
    write_text_file(path, content);
    man.add_output(path);
}

void write_metrics(const std::string& run_dir, const nlohmann::ordered_json& metrics,
                   RunManifest& man) {
    write_report(join_path(run_dir, "metrics.json"), metrics.dump(2) + "\n", man);
}

void write_loss_csv(const std::string& path, const std::vector<double>& trace,
                    RunManifest& man) {
    std::string out = "step,loss\n";
    for (size_t i = 0; i < trace.size(); ++i)
        out += std::to_string(i + 1) + "," + format_double(trace[i]) + "\n";
    write_report(path, out, man);
}

std::vector<double> parse_double_list(const std::string& csv, const std::string& what) {
    std::vector<double> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_scalar<double>(item, what));
    if (out.empty()) throw Error::usage(what + ": empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& what) {
    std::vector<int> out;
    if (csv.empty()) return out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_scalar<int>(item, what));
    return out;
}

// grouping for report-style subcommands: task counts when given, otherwise a
// 30/50/20 split by pretraining index, otherwise by raw row index
struct GroupContext {
    Vocabulary vocab;
    GroupAssignment groups;
    bool have_counts = false;
};

GroupContext make_groups(const EmbeddingMatrix& E, const std::string& counts_path,
                         const std::string& task_counts_path, RunManifest& man) {
    GroupContext ctx;
    if (!counts_path.empty()) {
        man.add_input(counts_path);
        ctx.vocab = rank_by_frequency(load_token_counts_jsonl(counts_path));
        ctx.have_counts = true;
    } else {
        std::vector<VocabEntry> entries(E.rows);
        for (uint32_t id = 0; id < E.rows; ++id)
            entries[id] = {int(id), "row" + std::to_string(id), uint64_t(E.rows - id)};
        ctx.vocab = rank_by_frequency(std::move(entries));
    }
    if (ctx.vocab.size() != E.rows)
        throw Error::runtime("counts cover " + std::to_string(ctx.vocab.size()) +
                             " ids but the embedding matrix has " + std::to_string(E.rows) +
                             " rows");
    if (!task_counts_path.empty()) {
        man.add_input(task_counts_path);
        const std::vector<uint64_t> task_counts =
            task_counts_from_entries(ctx.vocab, load_token_counts_jsonl(task_counts_path));
        ctx.groups = assign_groups(ctx.vocab, task_counts);
    } else {
        ctx.groups = assign_groups_by_index(ctx.vocab);
    }
    return ctx;
}

std::vector<Prompt> prompts_from_definitions(const std::string& defs_path, const Tokenizer& tok) {
    const DefinitionLoadReport rep = load_definitions(defs_path);
    for (const auto& bad : rep.bad_lines)
        std::cerr << "note: " << defs_path << ":" << bad.line << " skipped: " << bad.reason
                  << "\n";
    if (rep.records.empty()) throw Error::runtime(defs_path + ": no usable definitions");
    std::vector<Prompt> prompts;
    prompts.reserve(rep.records.size());
    for (const DefinitionRecord& rec : rep.records) {
        try {
            prompts.push_back(build_full_prompt(rec, tok));
        } catch (const Error& e) {
            throw Error::runtime("definition #" + std::to_string(rec.source_index) + " ('" +
                                 rec.word + "'): " + e.what());
        }
    }
    return prompts;
}

ModelMode parse_mode(const std::string& s) {
    if (s == "bert") return ModelMode::encoder;
    if (s == "t5") return ModelMode::encoder_decoder;
    throw Error::usage("mode must be 'bert' or 't5', got '" + s + "'");
}

nlohmann::ordered_json json_or_null(bool defined, double value) {
    return defined ? nlohmann::ordered_json(value) : nlohmann::ordered_json(nullptr);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"definition-embedding laboratory"};
    app.require_subcommand(1);
    app.fallthrough();

    uint64_t seed = 0;
    if (const char* env = std::getenv("DEFEMB_SEED"); env != nullptr) {
        try {
            seed = parse_scalar<uint64_t>(env, "DEFEMB_SEED");
        } catch (const Error& e) {
            std::cerr << error_record_json("usage", e.what());
            return 2;
        }
    }
    std::string config_path;
    CLI::Option* seed_opt = app.add_option("--seed", seed, "global RNG seed (env DEFEMB_SEED)");
    app.add_option("--config", config_path, "key=value config file");

    std::map<const CLI::App*, std::shared_ptr<Binder>> binders;
    std::function<void(RunManifest&)> action;
    std::function<std::string()> run_dir_of;

    const auto make_sub = [&](const std::string& name, const std::string& desc,
                              const std::shared_ptr<Binder>& binder, std::string* run) {
        CLI::App* sub = app.add_subcommand(name, desc);
        binder->sub = sub;
        binders[sub] = binder;
        *run = "runs/" + name;
        binder->option("run", *run, "run directory (default runs/" + name + ")");
        return sub;
    };

    // --- tokenizer-train -----------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string corpus, out, run;
            int vocab = 512, sentinels = 8;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("tokenizer-train", "train a byte-level BPE tokenizer", b,
                                 &o->run);
        b->option("corpus", o->corpus, "training text")->required();
        b->option("vocab", o->vocab, "target vocabulary size");
        b->option("sentinels", o->sentinels, "number of sentinel mask tokens");
        b->option("out", o->out, "output tokenizer file (default <run>/tok.bpe)");
        sub->callback([&action, &run_dir_of, &seed, o] {
            run_dir_of = [o] { return o->run; };
            action = [o, &seed](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "tok.bpe");
                man.add_input(o->corpus);
                man.set("vocab", std::to_string(o->vocab));
                man.set("sentinels", std::to_string(o->sentinels));
                const std::string corpus = read_text_file(o->corpus);
                const Tokenizer tok = Tokenizer::train(corpus, o->vocab, o->sentinels, seed);
                tok.save(o->out);
                man.add_output(o->out);
                std::vector<VocabEntry> counts(size_t(tok.vocab_size()));
                for (int id = 0; id < tok.vocab_size(); ++id)
                    counts[size_t(id)] = {id, tok.display(id), 0};
                for (int id : tok.encode(corpus)) ++counts[size_t(id)].count;
                const std::string counts_path = join_path(o->run, "counts.jsonl");
                save_token_counts_jsonl(counts, counts_path);
                man.add_output(counts_path);
                nlohmann::ordered_json metrics;
                metrics["achieved_vocab"] = tok.vocab_size();
                metrics["reached_target"] = tok.reached_target();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- pretrain ------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string tok, corpus, out, run, mode = "bert";
            PretrainConfig cfg;
            int steps = 800;
            bool untied = false;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("pretrain", "pretrain the toy PLM", b, &o->run);
        b->option("tok", o->tok, "tokenizer file")->required();
        b->option("corpus", o->corpus, "pretraining text")->required();
        b->option("mode", o->mode, "bert | t5");
        b->option("steps", o->steps, "training steps");
        b->option("h-e", o->cfg.h_e, "embedding width");
        b->option("h-s", o->cfg.h_s, "model width");
        b->option("layers", o->cfg.layers, "transformer layers");
        b->option("heads", o->cfg.heads, "attention heads");
        b->option("ffn", o->cfg.ffn, "feed-forward width");
        b->option("max-seq", o->cfg.max_seq, "positional table length");
        b->option("seq-len", o->cfg.seq_len, "training window length");
        b->option("batch", o->cfg.batch, "batch size");
        b->option("lr", o->cfg.base_lr, "base learning rate");
        b->option("warmup", o->cfg.warmup, "warmup steps");
        b->option("select-prob", o->cfg.select_prob, "per-token corruption rate");
        b->flag("untied", o->untied, "do not tie the LM head to the embeddings");
        b->option("out", o->out, "checkpoint path (default <run>/model.txf)");
        sub->callback([&action, &run_dir_of, &seed, o] {
            run_dir_of = [o] { return o->run; };
            action = [o, &seed](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "model.txf");
                o->cfg.mode = parse_mode(o->mode);
                o->cfg.tie_lm_head = !o->untied;
                man.add_input(o->tok);
                man.add_input(o->corpus);
                man.set("mode", o->mode);
                man.set("steps", std::to_string(o->steps));
                const Tokenizer tok = Tokenizer::load(o->tok);
                const TrainResult r =
                    pretrain_toy_plm(read_text_file(o->corpus), tok, o->cfg, o->steps, seed);
                save_checkpoint(r.params, o->out);
                man.add_output(o->out);
                const Mat<float>& te = r.params.tok_emb;
                EmbeddingMatrix emb(uint32_t(te.rows), uint32_t(te.cols));
                std::copy(te.a.begin(), te.a.end(), emb.data.begin());
                const std::string emb_path = join_path(o->run, "emb.emb");
                save_embeddings(emb, emb_path);
                man.add_output(emb_path);
                write_loss_csv(join_path(o->run, "loss.csv"), r.loss_trace, man);
                nlohmann::ordered_json metrics;
                if (!r.loss_trace.empty()) {
                    metrics["first_loss"] = r.loss_trace.front();
                    metrics["last_loss"] = r.loss_trace.back();
                }
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- prompts-build ---------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string tok, defs, out, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("prompts-build", "render definition prompts", b, &o->run);
        b->option("tok", o->tok, "tokenizer file")->required();
        b->option("defs", o->defs, "definitions JSONL")->required();
        b->option("out", o->out, "prompts JSONL (default <run>/prompts.jsonl)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "prompts.jsonl");
                man.add_input(o->tok);
                man.add_input(o->defs);
                const Tokenizer tok = Tokenizer::load(o->tok);
                const std::vector<Prompt> prompts = prompts_from_definitions(o->defs, tok);
                std::string text;
                for (const Prompt& p : prompts) {
                    text += prompt_to_json(p);
                    text += '\n';
                }
                write_text_file(o->out, text);
                man.add_output(o->out);
                std::vector<VocabEntry> counts(size_t(tok.vocab_size()));
                for (int id = 0; id < tok.vocab_size(); ++id)
                    counts[size_t(id)] = {id, tok.display(id), 0};
                for (const Prompt& p : prompts)
                    for (int id : p.token_ids) ++counts[size_t(id)].count;
                const std::string tc_path = join_path(o->run, "task_counts.jsonl");
                save_token_counts_jsonl(counts, tc_path);
                man.add_output(tc_path);
                nlohmann::ordered_json metrics;
                metrics["prompts"] = prompts.size();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- mimic-train -----------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string tok, plm, defs, out, run;
            MimicConfig cfg;
            int steps = 1500;
            bool freeze_body = false;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("mimic-train", "train the definition-embedding model", b,
                                 &o->run);
        b->option("tok", o->tok, "tokenizer file")->required();
        b->option("plm", o->plm, "pretrained checkpoint")->required();
        b->option("defs", o->defs, "definitions JSONL")->required();
        b->option("steps", o->steps, "training steps");
        b->option("batch", o->cfg.batch, "batch size");
        b->option("lr", o->cfg.base_lr, "base learning rate");
        b->option("warmup", o->cfg.warmup, "warmup steps");
        b->flag("freeze-body", o->freeze_body, "train only the mimic head");
        b->option("out", o->out, "checkpoint path (default <run>/defemb.txf)");
        sub->callback([&action, &run_dir_of, &seed, o] {
            run_dir_of = [o] { return o->run; };
            action = [o, &seed](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "defemb.txf");
                o->cfg.freeze_body = o->freeze_body;
                man.add_input(o->tok);
                man.add_input(o->plm);
                man.add_input(o->defs);
                man.set("steps", std::to_string(o->steps));
                const Tokenizer tok = Tokenizer::load(o->tok);
                const Params<float> plm = load_checkpoint<float>(o->plm);
                const std::vector<Prompt> prompts = prompts_from_definitions(o->defs, tok);
                const TrainResult r = train_mimic(plm, prompts, tok, o->cfg, o->steps, seed);
                save_checkpoint(r.params, o->out);
                man.add_output(o->out);
                write_loss_csv(join_path(o->run, "loss.csv"), r.loss_trace, man);
                nlohmann::ordered_json metrics;
                if (!r.loss_trace.empty()) {
                    metrics["first_loss"] = r.loss_trace.front();
                    metrics["last_loss"] = r.loss_trace.back();
                }
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- reconstruct -------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string tok, model, defs, out, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("reconstruct", "reconstruct definition embeddings", b, &o->run);
        b->option("tok", o->tok, "tokenizer file")->required();
        b->option("model", o->model, "trained definition-embedding checkpoint")->required();
        b->option("defs", o->defs, "definitions JSONL")->required();
        b->option("out", o->out, "reconstructions JSONL (default <run>/recon.jsonl)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "recon.jsonl");
                man.add_input(o->tok);
                man.add_input(o->model);
                man.add_input(o->defs);
                const Tokenizer tok = Tokenizer::load(o->tok);
                const Params<float> model = load_checkpoint<float>(o->model);
                const std::vector<Prompt> prompts = prompts_from_definitions(o->defs, tok);
                const Reconstructions bank = build_reconstruction_bank(model, prompts, tok);
                save_reconstructions(bank, o->out);
                man.add_output(o->out);
                nlohmann::ordered_json metrics;
                metrics["tokens"] = bank.by_token.size();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- plan ---------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string counts, task_counts, strategy = "last", exclusions, session, out, run;
            double alpha = 5.0;
            int min_index_top = 5000;
            bool backfill = false;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("plan", "build a replacement plan", b, &o->run);
        b->option("counts", o->counts, "pretraining token counts JSONL")->required();
        b->option("task-counts", o->task_counts, "task token counts JSONL")->required();
        b->option("alpha", o->alpha, "percentage of |V| to replace");
        b->option("strategy", o->strategy, "last | random | top");
        b->option("exclusions", o->exclusions, "comma-separated excluded ids");
        b->option("min-index-top", o->min_index_top, "top strategy: minimum pretraining rank");
        b->flag("backfill", o->backfill, "consume candidates past the window to hit the target");
        b->option("session", o->session, "session lock file (read if it exists)");
        b->option("out", o->out, "plan JSON (default <run>/plan.json)");
        sub->callback([&action, &run_dir_of, &seed, o] {
            run_dir_of = [o] { return o->run; };
            action = [o, &seed](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "plan.json");
                man.add_input(o->counts);
                man.add_input(o->task_counts);
                man.set("alpha", format_double(o->alpha));
                man.set("strategy", o->strategy);
                const Vocabulary vocab = rank_by_frequency(load_token_counts_jsonl(o->counts));
                const std::vector<uint64_t> task_counts =
                    task_counts_from_entries(vocab, load_token_counts_jsonl(o->task_counts));
                ReplacementConfig cfg;
                cfg.alpha = o->alpha;
                cfg.exclusions = parse_int_list(o->exclusions, "exclusions");
                cfg.seed = seed;
                cfg.min_index_for_top = o->min_index_top;
                cfg.backfill = o->backfill;
                if (o->strategy == "last")
                    cfg.strategy = ReplacementStrategy::last;
                else if (o->strategy == "random")
                    cfg.strategy = ReplacementStrategy::random;
                else if (o->strategy == "top")
                    cfg.strategy = ReplacementStrategy::top;
                else
                    throw Error::usage("strategy must be last, random or top");
                ReplacementSession session;
                if (!o->session.empty() && std::filesystem::exists(o->session)) {
                    man.add_input(o->session);
                    session = load_session(o->session);
                }
                const ReplacementPlan plan =
                    build_replacement_plan(vocab, task_vocab(vocab, task_counts), cfg, session);
                save_plan(plan, o->out);
                man.add_output(o->out);
                nlohmann::ordered_json metrics;
                metrics["target_count"] = plan.target_count;
                metrics["selected"] = plan.selected.size();
                metrics["skipped"] = plan.skipped.size();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- apply --------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string emb, plan, recon, session, out, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("apply", "apply a replacement plan to an embedding matrix", b,
                                 &o->run);
        b->option("emb", o->emb, "input EMB1 matrix")->required();
        b->option("plan", o->plan, "plan JSON")->required();
        b->option("recon", o->recon, "reconstructions JSONL")->required();
        b->option("session", o->session, "session lock file (read if present, updated)");
        b->option("out", o->out, "output EMB1 matrix (default <run>/replaced.emb)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "replaced.emb");
                man.add_input(o->emb);
                man.add_input(o->plan);
                man.add_input(o->recon);
                EmbeddingMatrix E = load_embeddings(o->emb);
                const ReplacementPlan plan = load_plan(o->plan);
                const Reconstructions recon = load_reconstructions(o->recon);
                ReplacementSession session;
                if (!o->session.empty() && std::filesystem::exists(o->session)) {
                    man.add_input(o->session);
                    session = load_session(o->session);
                }
                const ApplyResult res = apply_plan(E, plan, recon, session);
                save_embeddings(E, o->out);
                man.add_output(o->out);
                if (!o->session.empty()) {
                    save_session(session, o->session);
                    man.add_output(o->session);
                }
                nlohmann::ordered_json metrics;
                metrics["replaced"] = res.replaced_ids.size();
                metrics["locked"] = res.locked_ids.size();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- isotropy -------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string emb, counts, task_counts, out, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("isotropy", "per-group isotropy table", b, &o->run);
        b->option("emb", o->emb, "EMB1 matrix")->required();
        b->option("counts", o->counts, "pretraining token counts JSONL");
        b->option("task-counts", o->task_counts, "task token counts JSONL");
        b->option("out", o->out, "report CSV (default <run>/isotropy.csv)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "isotropy.csv");
                man.add_input(o->emb);
                const EmbeddingMatrix E = load_embeddings(o->emb);
                const GroupContext ctx = make_groups(E, o->counts, o->task_counts, man);
                std::ostringstream csv;
                write_group_isotropy_csv(group_isotropy(E, ctx.groups), csv);
                write_report(o->out, csv.str(), man);
            };
        });
    }

    // --- deldirection ------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string emb, out, run;
            int beta = -1;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("deldirection", "remove the mean and dominant directions", b,
                                 &o->run);
        b->option("emb", o->emb, "EMB1 matrix")->required();
        b->option("beta", o->beta, "directions to remove (-1: max(1, h_e/100))");
        b->option("out", o->out, "output EMB1 matrix (default <run>/deldir.emb)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "deldir.emb");
                man.add_input(o->emb);
                man.set("beta", std::to_string(o->beta));
                const EmbeddingMatrix E = load_embeddings(o->emb);
                const DelDirectionResult r = del_direction(E, DelDirectionConfig{o->beta});
                save_embeddings(r.out, o->out);
                man.add_output(o->out);
                nlohmann::ordered_json metrics;
                metrics["removed_directions"] = r.removed_directions.rows;
                metrics["isotropy_before"] = isotropy(E).score;
                metrics["isotropy_after"] = isotropy(r.out).score;
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- project ----------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string emb, counts, task_counts, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("project", "2-d projection scatter of an embedding matrix", b,
                                 &o->run);
        b->option("emb", o->emb, "EMB1 matrix")->required();
        b->option("counts", o->counts, "pretraining token counts JSONL");
        b->option("task-counts", o->task_counts, "task token counts JSONL");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                man.add_input(o->emb);
                const EmbeddingMatrix E = load_embeddings(o->emb);
                const GroupContext ctx = make_groups(E, o->counts, o->task_counts, man);
                const Projection2D proj = svd_project2d(E);
                std::ostringstream csv, svg;
                write_projection_csv(proj, &ctx.groups, csv);
                write_scatter_svg(proj, &ctx.groups, svg);
                write_report(join_path(o->run, "projection.csv"), csv.str(), man);
                write_report(join_path(o->run, "scatter.svg"), svg.str(), man);
            };
        });
    }

    // --- wordsim ----------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string emb, tok, data, metric = "dot", out, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("wordsim", "word-similarity evaluation", b, &o->run);
        b->option("emb", o->emb, "EMB1 matrix")->required();
        b->option("tok", o->tok, "tokenizer file")->required();
        b->option("data", o->data, "TSV word_a<TAB>word_b<TAB>score")->required();
        b->option("metric", o->metric, "dot | cosine");
        b->option("out", o->out, "report CSV (default <run>/similarity.csv)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "similarity.csv");
                man.add_input(o->emb);
                man.add_input(o->tok);
                man.add_input(o->data);
                man.set("metric", o->metric);
                SimilarityMetric metric;
                if (o->metric == "dot")
                    metric = SimilarityMetric::dot;
                else if (o->metric == "cosine")
                    metric = SimilarityMetric::cosine;
                else
                    throw Error::usage("metric must be dot or cosine");
                const EmbeddingMatrix E = load_embeddings(o->emb);
                const Tokenizer tok = Tokenizer::load(o->tok);
                const std::vector<SimilarityTriple> ds = load_similarity_tsv(o->data);
                const WordSimilarityReport rep = word_similarity_eval(E, tok, ds, metric);
                std::ostringstream csv;
                write_similarity_csv(ds, rep, csv);
                write_report(o->out, csv.str(), man);
                nlohmann::ordered_json metrics;
                metrics["spearman"] = json_or_null(rep.correlation.defined, rep.correlation.rho);
                metrics["pairs_used"] = rep.used.size();
                metrics["pairs_skipped"] = rep.skipped.size();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- mse-dist ----------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string pre, def, counts, bins = "0,0.5,1,2,5,10", bands = "0", out, run;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("mse-dist", "MSE distribution between two embedding tables", b,
                                 &o->run);
        b->option("pre", o->pre, "pre-trained EMB1 matrix")->required();
        b->option("def", o->def, "definition EMB1 matrix")->required();
        b->option("counts", o->counts, "pretraining counts JSONL (enables index bands)");
        b->option("bins", o->bins, "comma-separated MSE bin edges, first 0");
        b->option("bands", o->bands, "comma-separated index band edges, first 0");
        b->option("out", o->out, "report CSV (default <run>/mse_distribution.csv)");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                if (o->out.empty()) o->out = join_path(o->run, "mse_distribution.csv");
                man.add_input(o->pre);
                man.add_input(o->def);
                man.set("bins", o->bins);
                man.set("bands", o->bands);
                const EmbeddingMatrix pre = load_embeddings(o->pre);
                const EmbeddingMatrix def = load_embeddings(o->def);
                std::vector<int> rank_of;
                if (!o->counts.empty()) {
                    man.add_input(o->counts);
                    rank_of = rank_by_frequency(load_token_counts_jsonl(o->counts)).rank_of;
                }
                std::vector<size_t> bands;
                for (int v : parse_int_list(o->bands, "bands")) {
                    if (v < 0) throw Error::usage("bands: negative edge");
                    bands.push_back(size_t(v));
                }
                const MseDistribution d = mse_distribution(
                    pre, def, parse_double_list(o->bins, "bins"), bands, rank_of);
                std::ostringstream csv;
                write_mse_distribution_csv(d, csv);
                write_report(o->out, csv.str(), man);
            };
        });
    }

    // --- probe ------------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string data, run;
            double test_fraction = 0.3;
            ProbeTrainConfig cfg;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("probe", "train/evaluate the probing classifier", b, &o->run);
        b->option("data", o->data, "JSONL {\"state\": [...], \"label\": 0|1|2}")->required();
        b->option("test-fraction", o->test_fraction, "held-out fraction");
        b->option("steps", o->cfg.steps, "training steps");
        b->option("batch", o->cfg.batch, "batch size");
        b->option("lr", o->cfg.lr, "learning rate");
        sub->callback([&action, &run_dir_of, &seed, o] {
            run_dir_of = [o] { return o->run; };
            action = [o, &seed](RunManifest& man) {
                man.add_input(o->data);
                if (o->test_fraction <= 0.0 || o->test_fraction >= 1.0)
                    throw Error::usage("test-fraction must lie in (0, 1)");
                std::vector<ProbeExample> all;
                const std::vector<std::string> lines = read_lines(o->data);
                for (size_t i = 0; i < lines.size(); ++i) {
                    if (lines[i].empty()) continue;
                    try {
                        const nlohmann::json j = nlohmann::json::parse(lines[i]);
                        all.push_back({j.at("state").get<std::vector<float>>(),
                                       j.at("label").get<int>()});
                    } catch (const nlohmann::json::exception& e) {
                        throw Error::runtime(o->data + ":" + std::to_string(i + 1) + ": " +
                                             e.what());
                    }
                }
                if (all.size() < 4)
                    throw Error::runtime("probe needs at least 4 examples, got " +
                                         std::to_string(all.size()));
                Rng rng(seed);
                rng.shuffle(all);
                const size_t n_test =
                    std::max<size_t>(1, size_t(o->test_fraction * double(all.size())));
                const std::vector<ProbeExample> test(all.begin(),
                                                     all.begin() + ptrdiff_t(n_test));
                const std::vector<ProbeExample> train(all.begin() + ptrdiff_t(n_test),
                                                      all.end());
                const ProbeParams probe = train_probe(train, o->cfg, seed);
                nlohmann::ordered_json metrics;
                metrics["accuracy"] = probe_accuracy(probe, test);
                metrics["train_examples"] = train.size();
                metrics["test_examples"] = test.size();
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- dynamics ----------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string init = "scratch", run;
            DynamicsConfig cfg;
            bool no_tying = false;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("dynamics", "embedding-dynamics run on a Zipfian stream", b,
                                 &o->run);
        b->option("init", o->init, "scratch | pretrained");
        b->flag("no-tying", o->no_tying, "untie the LM head");
        b->option("vocab", o->cfg.vocab, "synthetic vocabulary size");
        b->option("appearing", o->cfg.appearing, "task sub-vocabulary size");
        b->option("exponent", o->cfg.zipf_exponent, "Zipf exponent");
        b->option("corpus-len", o->cfg.corpus_len, "stream length in tokens");
        b->option("steps", o->cfg.steps, "training steps");
        b->option("snapshot-every", o->cfg.snapshot_every, "snapshot interval");
        b->option("pretrain-steps", o->cfg.pretrain_steps, "warm-start steps");
        b->option("h-e", o->cfg.h_e, "embedding width");
        b->option("h-s", o->cfg.h_s, "model width");
        b->option("layers", o->cfg.layers, "transformer layers");
        b->option("heads", o->cfg.heads, "attention heads");
        b->option("ffn", o->cfg.ffn, "feed-forward width");
        b->option("seq-len", o->cfg.seq_len, "window length");
        b->option("batch", o->cfg.batch, "batch size");
        b->option("lr", o->cfg.base_lr, "base learning rate");
        b->option("warmup", o->cfg.warmup, "warmup steps");
        b->option("select-prob", o->cfg.select_prob, "per-token corruption rate");
        sub->callback([&action, &run_dir_of, &seed, o] {
            run_dir_of = [o] { return o->run; };
            action = [o, &seed](RunManifest& man) {
                if (o->init == "scratch")
                    o->cfg.init = DynamicsConfig::Init::scratch;
                else if (o->init == "pretrained")
                    o->cfg.init = DynamicsConfig::Init::pretrained;
                else
                    throw Error::usage("init must be scratch or pretrained");
                o->cfg.weight_tying = !o->no_tying;
                o->cfg.seed = seed;
                man.set("init", o->init);
                man.set("weight_tying", o->cfg.weight_tying ? "true" : "false");
                man.set("steps", std::to_string(o->cfg.steps));
                const DynamicsResult r = dynamics_run(o->cfg);
                std::ostringstream csv;
                write_dynamics_csv(r, csv);
                write_report(join_path(o->run, "dynamics.csv"), csv.str(), man);
                const std::string final_emb = join_path(o->run, "final.emb");
                save_embeddings(r.snapshots.back().embedding, final_emb);
                man.add_output(final_emb);
                const DynamicsSnapshot& first = r.snapshots.front();
                const DynamicsSnapshot& last = r.snapshots.back();
                nlohmann::ordered_json metrics;
                metrics["initial_appearing_cosine"] =
                    json_or_null(first.appearing_cosine.defined, first.appearing_cosine.mean);
                metrics["final_appearing_cosine"] =
                    json_or_null(last.appearing_cosine.defined, last.appearing_cosine.mean);
                metrics["final_frequent_drift"] = last.drift.frequent.mean_displacement;
                metrics["final_isotropy"] = last.isotropy_score;
                write_metrics(o->run, metrics, man);
            };
        });
    }

    // --- report ------------------------------------------------------------------------
    {
        auto b = std::make_shared<Binder>();
        struct Opts {
            std::string emb, counts, task_counts, run;
            int bin_size = 50;
        };
        auto o = std::make_shared<Opts>();
        CLI::App* sub = make_sub("report", "full static geometry report for one matrix", b,
                                 &o->run);
        b->option("emb", o->emb, "EMB1 matrix")->required();
        b->option("counts", o->counts, "pretraining token counts JSONL");
        b->option("task-counts", o->task_counts, "task token counts JSONL");
        b->option("bin-size", o->bin_size, "rank-bin width for the frequency report");
        sub->callback([&action, &run_dir_of, o] {
            run_dir_of = [o] { return o->run; };
            action = [o](RunManifest& man) {
                man.add_input(o->emb);
                if (o->bin_size < 1) throw Error::usage("bin-size must be positive");
                const EmbeddingMatrix E = load_embeddings(o->emb);
                const GroupContext ctx = make_groups(E, o->counts, o->task_counts, man);
                {
                    std::ostringstream csv;
                    write_group_isotropy_csv(group_isotropy(E, ctx.groups), csv);
                    write_report(join_path(o->run, "isotropy.csv"), csv.str(), man);
                }
                const Projection2D proj = svd_project2d(E);
                {
                    std::ostringstream csv;
                    write_projection_csv(proj, &ctx.groups, csv);
                    write_report(join_path(o->run, "projection.csv"), csv.str(), man);
                }
                {
                    std::ostringstream svg;
                    write_scatter_svg(proj, &ctx.groups, svg);
                    write_report(join_path(o->run, "scatter.svg"), svg.str(), man);
                }
                if (ctx.have_counts && !o->task_counts.empty()) {
                    const std::vector<uint64_t> task_counts = task_counts_from_entries(
                        ctx.vocab, load_token_counts_jsonl(o->task_counts));
                    std::ostringstream csv;
                    write_bin_report_csv(
                        bin_report(ctx.vocab, task_counts, size_t(o->bin_size)), csv);
                    write_report(join_path(o->run, "bins.csv"), csv.str(), man);
                }
            };
        });
    }

    // --- parse & dispatch ---------------------------------------------------------------
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << error_record_json("usage", e.what());
        return 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        if (!config_path.empty()) {
            std::map<std::string, std::string> cfg = load_config_file(config_path);
            if (const auto it = cfg.find("seed"); it != cfg.end()) {
                if (seed_opt->count() == 0) seed = parse_scalar<uint64_t>(it->second, "seed");
                cfg.erase(it);
            }
            binders.at(sub)->apply(cfg);
        }
        if (!action) throw Error::usage("no subcommand selected");
        const std::string run_dir = run_dir_of();
        ensure_directory(run_dir);
        RunManifest man;
        man.command = sub->get_name();
        man.seed = seed;
        man.set("run", run_dir);
        action(man);
        man.write(run_dir);
        return 0;
    } catch (const Error& e) {
        std::cerr << error_record_json(e.kind() == Error::Kind::usage ? "usage" : "runtime",
                                       e.what());
        return e.kind() == Error::Kind::usage ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << error_record_json("runtime", e.what());
        return 1;
    }
}
