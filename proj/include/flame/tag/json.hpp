// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include "flame/tag/job_spec.hpp"

namespace flame::tag {

using ordered_json = nlohmann::ordered_json;

JobSpec job_spec_from_json(const ordered_json& doc);
ordered_json job_spec_to_json(const JobSpec& spec);

}  // namespace flame::tag
