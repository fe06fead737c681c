// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace flame::expansion {

inline constexpr std::string_view kAnyRealm = "*";

std::vector<std::string_view> realm_segments(std::string_view realm);

// True when `compute_realm` is "*" or a segment-wise prefix of `realm`
// ("us" admits "us/west", but not "usa").
bool realm_admits(std::string_view compute_realm, std::string_view realm);

// Longest common segment-wise prefix; "" when the realms share nothing.
std::string common_realm(std::string_view a, std::string_view b);

// Number of segments; "*" counts as zero.
std::size_t realm_depth(std::string_view realm);

}  // namespace flame::expansion
