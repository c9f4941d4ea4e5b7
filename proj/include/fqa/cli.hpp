// Copyright 2026 The FreqAdapter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fqa/json.hpp"

namespace fqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerify = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

// Every key a command reads, with its default value.
json default_config();

// defaults < config file < flags. `overrides` are dotted paths into the
// document ("adapter.h", "train.learning_rate"); values parse as JSON and fall
// back to plain strings. Unknown keys throw ConfigError. The top-level seed is
// copied into every subsystem seed.
json resolve_config(const std::optional<std::filesystem::path>& file, std::optional<std::uint64_t> seed,
                    const std::vector<std::pair<std::string, std::string>>& overrides);

// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fqa::cli
