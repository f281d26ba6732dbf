#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace defemb {

struct VocabEntry {
    int id = 0;
    std::string token;
    uint64_t count = 0;  // pretraining-corpus frequency
};

// Pretraining vocabulary with its canonical rank order: descending count,
// ties broken by ascending id. entries stays indexed by id.
struct Vocabulary {
    std::vector<VocabEntry> entries;  // entries[id]
    std::vector<int> order;           // ids, most frequent first
    std::vector<int> rank_of;         // rank_of[id] = position in `order`

    size_t size() const { return entries.size(); }
};

// Validates that ids are exactly {0..n-1} (each once) and builds the order.
Vocabulary rank_by_frequency(std::vector<VocabEntry> entries);

enum class Group : uint8_t { frequent = 0, medium = 1, rare = 2, non_appearing = 3 };
enum class GroupBasis : uint8_t { task_frequency, pretraining_index };

const char* group_name(Group g);

// Appearing tokens (task count > 0) split 30% / 50% / 20% by floor: the first
// floor(0.3*A) of the chosen ranking are frequent, the next floor(0.5*A)
// medium, the remainder rare. Non-appearing tokens get their own label.
struct GroupAssignment {
    std::vector<Group> group_of;  // indexed by id
    size_t appearing = 0;
    GroupBasis basis = GroupBasis::task_frequency;
    std::array<size_t, 3> sizes{};  // frequent, medium, rare

    std::vector<int> members(Group g) const;
};

GroupAssignment assign_groups(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts,
                              GroupBasis basis = GroupBasis::task_frequency);

// 30/50/20 split of the whole vocabulary by pretraining rank, every token
// treated as appearing. Used for static isotropy tables when no task counts
// are available.
GroupAssignment assign_groups_by_index(const Vocabulary& vocab);

// Appearing ids ordered by pretraining rank (the task vocabulary V_task).
std::vector<int> task_vocab(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts);

// Fixed-width bins over the first floor(|V|/bin_size)*bin_size pretraining
// ranks. A bin with no appearing token reports count 0 and an undefined mean.
struct BinReport {
    size_t bin_size = 0;
    struct Bin {
        size_t appearing = 0;
        double log10_mean_freq = 0.0;
        bool defined = false;
    };
    std::vector<Bin> bins;
};

BinReport bin_report(const Vocabulary& vocab, const std::vector<uint64_t>& task_counts,
                     size_t bin_size);

// CSV: header `bin,appearing,log10_mean_freq`; undefined means print as `nan`
void write_bin_report_csv(const BinReport& report, std::ostream& out);

// JSONL {"id":..,"token":..,"count":..}, one record per line
std::vector<VocabEntry> load_token_counts_jsonl(const std::string& path);
void save_token_counts_jsonl(const std::vector<VocabEntry>& entries, const std::string& path);

// task counts indexed by id, aligned with `vocab` (errors on size mismatch)
std::vector<uint64_t> task_counts_from_entries(const Vocabulary& vocab,
                                               const std::vector<VocabEntry>& task_entries);

}  // namespace defemb
