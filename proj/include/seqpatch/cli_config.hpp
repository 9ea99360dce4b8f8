#pragma once

#include "json.hpp"

#include <string>
#include <vector>

#include "seqpatch/bytes.hpp"
#include "seqpatch/errors.hpp"

namespace seqpatch {

/// Thrown for malformed command lines; maps to exit code 1.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Turns ["--a.b", "3", "--name", "x"] into {"a": {"b": 3}, "name": "x"}. Dashes inside
/// keys become underscores; values are parsed as JSON when possible, else kept as strings.
inline nlohmann::json parse_overrides(const std::vector<std::string>& args)
{
    nlohmann::json out = nlohmann::json::object();
    for (std::size_t i = 0; i < args.size(); i += 2) {
        const std::string& flag = args[i];
        if (flag.size() < 3 || flag.rfind("--", 0) != 0)
            throw UsageError("expected --key, got '" + flag + "'");
        if (i + 1 >= args.size())
            throw UsageError("missing value for " + flag);
        std::string key = flag.substr(2);
        std::replace(key.begin(), key.end(), '-', '_');
        nlohmann::json value = nlohmann::json::parse(args[i + 1], nullptr, false);
        if (value.is_discarded())
            value = args[i + 1];
        nlohmann::json* node = &out;
        std::size_t start = 0;
        for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
            node = &(*node)[key.substr(start, dot - start)];
        (*node)[key.substr(start)] = value;
    }
    return out;
}

/// Config file (if any) with command-line overrides merged on top.
inline nlohmann::json load_config(const std::string& path, const std::vector<std::string>& overrides)
{
    nlohmann::json cfg = nlohmann::json::object();
    if (!path.empty()) {
        cfg = nlohmann::json::parse(read_file(path), nullptr, false);
        if (cfg.is_discarded() || !cfg.is_object())
            throw DataError("config " + path + " is not a JSON object");
    }
    cfg.merge_patch(parse_overrides(overrides));
    return cfg;
}

/// Rejects keys outside `allowed` so that typos fail loudly.
inline void check_keys(const nlohmann::json& cfg, const std::vector<std::string>& allowed)
{
    for (const auto& [k, v] : cfg.items())
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw UsageError("unknown option '" + k + "'");
}

template <typename T>
T require(const nlohmann::json& cfg, const std::string& key)
{
    if (!cfg.contains(key))
        throw UsageError("missing required option --" + key);
    try {
        return cfg.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw UsageError("option --" + key + " has the wrong type");
    }
}

} // namespace seqpatch
