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

#include <json.hpp>

#include "fqa/adapter.hpp"
#include "fqa/data.hpp"

namespace fqa {

using json = nlohmann::json;

void to_json(json& j, const InitSpec& s);
void from_json(const json& j, InitSpec& s);
void to_json(json& j, const AdapterConfig& c);
void from_json(const json& j, AdapterConfig& c);
void to_json(json& j, const SyntheticSpec& s);
void from_json(const json& j, SyntheticSpec& s);

}  // namespace fqa
