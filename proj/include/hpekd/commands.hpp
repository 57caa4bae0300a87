// Copyright 2026 The hpekd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>

namespace hpekd::cli {

/// Resolved options of one run: built-in defaults, overridden by the config
/// file, overridden by command-line flags.
class RunConfig
{
public:
    RunConfig(std::string command, nlohmann::json values);

    /// defaults <- config file (if any) <- flags
    static RunConfig resolve(const std::string& command, const nlohmann::json& flags,
                             const std::filesystem::path& config_file = {});

    const std::string& command() const noexcept { return command_; }
    const nlohmann::json& values() const noexcept { return values_; }

    template <typename T>
    T get(const std::string& key) const
    {
        return values_.at(key).get<T>();
    }
    bool has(const std::string& key) const;
    std::filesystem::path out_dir() const;

    /// Writes run_config.json into the output directory.
    void freeze() const;

private:
    std::string command_;
    nlohmann::json values_;
};

/// Built-in defaults for a subcommand.
nlohmann::json default_options(const std::string& command);

/// Runs one subcommand. Returns the process exit code; errors propagate as
/// exceptions (see run_main for their mapping to exit codes).
int run(const RunConfig& config, std::ostream& log);

int cmd_synth(const RunConfig& config, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_sweep(const RunConfig& config, std::ostream& log);
int cmd_cache(const RunConfig& config, std::ostream& log);
int cmd_distill(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_render(const RunConfig& config, std::ostream& log);

/// Runs a command and maps failures: missing files exit with 2, every other
/// error with 1 (message on err).
int run_main(const RunConfig& config, std::ostream& log, std::ostream& err);

}   // hpekd::cli
