#pragma once

#include <string>
#include <string_view>

#include "mrreparam/error.hpp"

namespace mrreparam {

/// Spin-echo acquisition setting in seconds.
struct ScanParams {
  double te_s = 0.0;
  double tr_s = 0.0;

  friend bool operator==(const ScanParams&, const ScanParams&) = default;
};

/// Input setting of every Default-to-Param sample.
inline constexpr ScanParams kDefaultParams{0.05, 4.5};

/// Sampling bounds of the acquisition parameters.
inline constexpr double kTeMin = 0.02;
inline constexpr double kTeMax = 1.0;
inline constexpr double kTrMin = 1.2;
inline constexpr double kTrMax = 10.0;

/// Default-to-Param: fixed input setting. Param-to-Param: arbitrary input setting.
enum class Mode { D2P, P2P };

inline std::string to_string(Mode mode) { return mode == Mode::D2P ? "d2p" : "p2p"; }

inline Mode parse_mode(std::string_view text) {
  if (text == "d2p" || text == "D2P") return Mode::D2P;
  if (text == "p2p" || text == "P2P") return Mode::P2P;
  throw InvalidArgument("unknown mode '" + std::string(text) + "' (expected d2p or p2p)");
}

}  // namespace mrreparam
