#pragma once

#include "coda/annotator.hpp"
#include "coda/exchange.hpp"
#include "coda/temporal_model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace coda {

enum class ValueKind { real, integer, boolean, text };

struct ConfigKey {
    std::string name;
    ValueKind kind;
    std::string default_value;
    std::string help;
};

// Every tunable of the tool as flat dotted keys. Values are kept as validated
// text so a snapshot reproduces the run exactly.
class RunConfig {
public:
    RunConfig();

    static const std::vector<ConfigKey>& registry();

    void set(const std::string& key, const std::string& value);
    [[nodiscard]] const std::string& get(const std::string& key) const;
    [[nodiscard]] double real(const std::string& key) const;
    [[nodiscard]] long long integer(const std::string& key) const;
    [[nodiscard]] bool boolean(const std::string& key) const;

    // key=value lines; '#' starts a comment. Unknown keys are rejected.
    void load_text(const std::string& text, const std::string& origin = "config");
    void load_file(const std::filesystem::path& path);
    [[nodiscard]] std::string to_text() const;

    [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

DetectorConfig detector_config(const RunConfig& config);
TrainOptions train_options(const RunConfig& config);
AnalyzeOptions analyze_options(const RunConfig& config);

}  // namespace coda
