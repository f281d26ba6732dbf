#include "defemb/manifest.hpp"

#include <ctime>

#include <nlohmann/json.hpp>

#include "defemb/error.hpp"
#include "defemb/io_util.hpp"

namespace defemb {

using ordered_json = nlohmann::ordered_json;

void RunManifest::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : config) {
        if (k == key) {
            v = value;
            return;
        }
    }
    config.emplace_back(key, value);
}

void RunManifest::add_input(const std::string& path) {
    inputs.emplace_back(path, hex64(fnv1a64_file(path)));
}

void RunManifest::add_output(const std::string& path) { outputs.push_back(path); }

std::string RunManifest::to_json(bool include_timestamp) const {
    ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    ordered_json jc = ordered_json::object();
    for (const auto& [k, v] : config) jc[k] = v;
    j["config"] = std::move(jc);
    ordered_json ji = ordered_json::object();
    for (const auto& [p, h] : inputs) ji[p] = h;
    j["inputs"] = std::move(ji);
    j["outputs"] = outputs;
    if (include_timestamp) j["timestamp"] = timestamp;
    return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& run_dir) {
    ensure_directory(run_dir);
    timestamp = utc_timestamp_now();
    write_text_file(run_dir + "/manifest.json", to_json(true));
}

std::string utc_timestamp_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string error_record_json(const std::string& kind, const std::string& message) {
    ordered_json j;
    j["error"]["kind"] = kind;
    j["error"]["message"] = message;
    return j.dump() + "\n";
}

}  // namespace defemb
