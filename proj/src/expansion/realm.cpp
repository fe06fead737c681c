// SPDX-License-Identifier: Apache-2.0
#include "flame/expansion/realm.hpp"

namespace flame::expansion {

std::vector<std::string_view> realm_segments(std::string_view realm) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= realm.size()) {
    auto pos = realm.find('/', start);
    if (pos == std::string_view::npos) pos = realm.size();
    if (pos > start) out.push_back(realm.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool realm_admits(std::string_view compute_realm, std::string_view realm) {
  if (compute_realm == kAnyRealm) return true;
  auto outer = realm_segments(compute_realm);
  auto inner = realm_segments(realm);
  if (outer.empty() || outer.size() > inner.size()) return false;
  for (std::size_t i = 0; i < outer.size(); ++i)
    if (outer[i] != inner[i]) return false;
  return true;
}

std::string common_realm(std::string_view a, std::string_view b) {
  auto sa = realm_segments(a);
  auto sb = realm_segments(b);
  std::string out;
  for (std::size_t i = 0; i < sa.size() && i < sb.size() && sa[i] == sb[i]; ++i) {
    if (!out.empty()) out += '/';
    out += sa[i];
  }
  return out.empty() ? std::string(kAnyRealm) : out;
}

std::size_t realm_depth(std::string_view realm) {
  if (realm == kAnyRealm) return 0;
  return realm_segments(realm).size();
}

}  // namespace flame::expansion
