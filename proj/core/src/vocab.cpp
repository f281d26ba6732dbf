#include "defemb/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "defemb/error.hpp"
#include "defemb/io_util.hpp"

namespace defemb {

Vocabulary rank_by_frequency(std::vector<VocabEntry> entries) {
    const size_t n = entries.size();
    std::vector<VocabEntry> by_id(n);
    std::vector<bool> seen(n, false);
    for (const VocabEntry& e : entries) {
        if (e.id < 0 || static_cast<size_t>(e.id) >= n)
            throw Error::runtime("vocabulary: id " + std::to_string(e.id) +
                                 " out of range for size " + std::to_string(n));
        if (seen[static_cast<size_t>(e.id)])
            throw Error::runtime("vocabulary: duplicate id " + std::to_string(e.id));
        seen[static_cast<size_t>(e.id)] = true;
        by_id[static_cast<size_t>(e.id)] = e;
    }
    // seen[] full coverage is implied: n entries, all distinct, all in range

    Vocabulary v;
    v.entries = std::move(by_id);
    v.order.resize(n);
    for (size_t i = 0; i < n; ++i) v.order[i] = static_cast<int>(i);
    std::sort(v.order.begin(), v.order.end(), [&](int a, int b) {
        const uint64_t ca = v.entries[static_cast<size_t>(a)].count;
        const uint64_t cb = v.entries[static_cast<size_t>(b)].count;
        if (ca != cb) return ca > cb;
        return a < b;
    });
    v.rank_of.assign(n, 0);
    for (size_t r = 0; r < n; ++r) v.rank_of[static_cast<size_t>(v.order[r])] = static_cast<int>(r);
    return v;
}

const char* group_name(Group g) {
    switch (g) {
        case Group::frequent: return "frequent";
        case Group::medium: return "medium";
        case Group::rare: return "rare";
        case Group::non_appearing: return "non_appearing";
    }
    return "?";
}

std::vector<int> GroupAssignment::members(Group g) const {
    std::vector<int> ids;
    for (size_t id = 0; id < group_of.size(); ++id)
        if (group_of[id] == g) ids.push_back(static_cast<int>(id));
    return ids;
}

namespace {

GroupAssignment split_30_50_20(size_t vocab_size, const std::vector<int>& ranked_appearing,
                               GroupBasis basis) {
    GroupAssignment ga;
    ga.basis = basis;
    ga.appearing = ranked_appearing.size();
    ga.group_of.assign(vocab_size, Group::non_appearing);
    const size_t a = ranked_appearing.size();
    // floor(0.3*a) and floor(0.5*a), in exact integer arithmetic
    const size_t n_freq = (3 * a) / 10;
    const size_t n_med = (5 * a) / 10;
    for (size_t i = 0; i < a; ++i) {
        Group g = Group::rare;
        if (i < n_freq)
            g = Group::frequent;
        else if (i < n_freq + n_med)
            g = Group::medium;
        ga.group_of[static_cast<size_t>(ranked_appearing[i])] = g;
    }
    ga.sizes = {n_freq, n_med, a - n_freq - n_med};
    return ga;
}

void check_task_counts(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts) {
    if (task_counts.size() != vocab.size())
        throw Error::runtime("task counts cover " + std::to_string(task_counts.size()) +
                             " ids but vocabulary has " + std::to_string(vocab.size()));
}

}  // namespace

GroupAssignment assign_groups(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts,
                              GroupBasis basis) {
    check_task_counts(vocab, task_counts);
    std::vector<int> appearing;
    for (const int id : vocab.order)  // pretraining order; stable base for both bases
        if (task_counts[static_cast<size_t>(id)] > 0) appearing.push_back(id);
    if (basis == GroupBasis::task_frequency) {
        std::stable_sort(appearing.begin(), appearing.end(), [&](int x, int y) {
            return task_counts[static_cast<size_t>(x)] > task_counts[static_cast<size_t>(y)];
        });  // ties keep pretraining order (stable)
    }
    return split_30_50_20(vocab.size(), appearing, basis);
}

GroupAssignment assign_groups_by_index(const Vocabulary& vocab) {
    return split_30_50_20(vocab.size(), vocab.order, GroupBasis::pretraining_index);
}

std::vector<int> task_vocab(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts) {
    check_task_counts(vocab, task_counts);
    std::vector<int> ids;
    for (const int id : vocab.order)
        if (task_counts[static_cast<size_t>(id)] > 0) ids.push_back(id);
    return ids;
}

BinReport bin_report(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts,
                     size_t bin_size) {
    check_task_counts(vocab, task_counts);
    if (bin_size == 0) throw Error::usage("bin_size must be positive");
    BinReport rep;
    rep.bin_size = bin_size;
    const size_t n_bins = vocab.size() / bin_size;  // ranks beyond n_bins*bin_size are dropped
    rep.bins.resize(n_bins);
    for (size_t b = 0; b < n_bins; ++b) {
        uint64_t sum = 0;
        size_t appearing = 0;
        for (size_t r = b * bin_size; r < (b + 1) * bin_size; ++r) {
            const uint64_t c = task_counts[static_cast<size_t>(vocab.order[r])];
            if (c > 0) {
                ++appearing;
                sum += c;
            }
        }
        auto& bin = rep.bins[b];
        bin.appearing = appearing;
        if (appearing > 0) {
            bin.defined = true;
            bin.log10_mean_freq =
                std::log10(static_cast<double>(sum) / static_cast<double>(appearing));
        } else {
            bin.defined = false;
            bin.log10_mean_freq = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return rep;
}

void write_bin_report_csv(const BinReport& report, std::ostream& out) {
    out << "bin,appearing,log10_mean_freq\n";
    for (size_t b = 0; b < report.bins.size(); ++b) {
        const auto& bin = report.bins[b];
        out << b << ',' << bin.appearing << ','
            << (bin.defined ? format_double(bin.log10_mean_freq) : "nan") << '\n';
    }
}

std::vector<VocabEntry> load_token_counts_jsonl(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    std::vector<VocabEntry> entries;
    entries.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            throw Error::runtime(path + ": line " + std::to_string(i + 1) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("token") || !j.contains("count"))
            throw Error::runtime(path + ": line " + std::to_string(i + 1) +
                                 ": expected {\"id\",\"token\",\"count\"}");
        VocabEntry e;
        e.id = j.at("id").get<int>();
        e.token = j.at("token").get<std::string>();
        e.count = j.at("count").get<uint64_t>();
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_token_counts_jsonl(const std::vector<VocabEntry>& entries, const std::string& path) {
    std::ostringstream out;
    for (const VocabEntry& e : entries) {
        nlohmann::json j;
        j["id"] = e.id;
        j["token"] = e.token;
        j["count"] = e.count;
        out << j.dump() << '\n';
    }
    write_text_file(path, out.str());
}

std::vector<uint64_t> task_counts_from_entries(const Vocabulary& vocab,
                                               const std::vector<VocabEntry>& task_entries) {
    std::vector<uint64_t> counts(vocab.size(), 0);
    for (const VocabEntry& e : task_entries) {
        if (e.id < 0 || static_cast<size_t>(e.id) >= vocab.size())
            throw Error::runtime("task counts: id " + std::to_string(e.id) +
                                 " out of range for vocabulary of size " +
                                 std::to_string(vocab.size()));
        counts[static_cast<size_t>(e.id)] += e.count;
    }
    return counts;
}

}  // namespace defemb
