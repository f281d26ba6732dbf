#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace defemb {

// Reproducibility record for one CLI run. Everything except `timestamp` is a
// pure function of the run's inputs, so two identical runs produce manifests
// that differ only in that one field (to_json(false) drops it for
// byte-comparison).
struct RunManifest {
    std::string command;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config;  // key, value
    std::vector<std::pair<std::string, std::string>> inputs;  // path, fnv1a64 hex
    std::vector<std::string> outputs;
    std::string timestamp;  // ISO-8601 UTC

    void set(const std::string& key, const std::string& value);
    void add_input(const std::string& path);  // hashes the file
    void add_output(const std::string& path);

    std::string to_json(bool include_timestamp = true) const;
    // writes <run_dir>/manifest.json (timestamp filled from the clock)
    void write(const std::string& run_dir);
};

std::string utc_timestamp_now();

// machine-readable error record emitted by the CLI on failure
std::string error_record_json(const std::string& kind, const std::string& message);

}  // namespace defemb
