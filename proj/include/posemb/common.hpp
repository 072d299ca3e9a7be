#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

namespace posemb {

inline constexpr int kJointCount = 16;

// MPII joint order: 0 r-ankle, 1 r-knee, 2 r-hip, 3 l-hip, 4 l-knee,
// 5 l-ankle, 6 pelvis, 7 thorax, 8 upper neck, 9 head top, 10 r-wrist,
// 11 r-elbow, 12 r-shoulder, 13 l-shoulder, 14 l-elbow, 15 l-wrist.
inline constexpr int kDefaultRootIndex = 6;  // pelvis

using PoseId = std::int64_t;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

enum class Split { kTrain, kDatabase, kQuery };

const char* to_string(Split s);
std::optional<Split> split_from_string(std::string_view s);

namespace detail {

// Builds an error/message string from stream-printable pieces.
template <class... Ts>
std::string cat(Ts&&... ts) {
  std::ostringstream os;
  (os << ... << ts);
  return os.str();
}

}  // namespace detail

}  // namespace posemb
