// SPDX-License-Identifier: Apache-2.0
//
// isac-crlb: multi-target sensing bounds and precoder design for massive MIMO ISAC
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include "isac/common.hpp"

namespace isac {

// Uniform linear array. The transmit and receive arrays of the monostatic base
// station are assumed identical and co-located, so one config describes both.
struct ArrayConfig {
  int num_antennas = 64;
  double element_spacing = 0.5;  // in wavelengths

  void validate() const {
    detail::require(num_antennas >= 2, "ArrayConfig: num_antennas must be >= 2");
    detail::require(std::isfinite(element_spacing) && element_spacing > 0.0,
                    "ArrayConfig: element_spacing must be > 0");
  }
};

// Response of the array towards one direction.
//   a      : steering vector
//   a_dot  : d a / d phi
//   A      : a a^T (complex symmetric, rank one)
//   A_dot  : d A / d phi = a_dot a^T + a a_dot^T
struct SteeringResponse {
  CVector a;
  CVector a_dot;
  CMatrix A;
  CMatrix A_dot;
};

namespace detail {
inline void check_angle(double phi) {
  if (!std::isfinite(phi)) throw InvalidArgument("steering: angle must be finite");
}
}  // namespace detail

/// Broadside-referenced ULA response, phase reference at element 0:
/// a_m(phi) = exp(j 2 pi d m sin(phi)), m = 0..M-1.
inline CVector steering_vector(double phi, const ArrayConfig& cfg) {
  cfg.validate();
  detail::check_angle(phi);
  const double k = 2.0 * kPi * cfg.element_spacing * std::sin(phi);
  CVector a(cfg.num_antennas);
  for (int m = 0; m < cfg.num_antennas; ++m) a(m) = std::polar(1.0, k * m);
  return a;
}

/// Entrywise derivative of steering_vector with respect to phi.
inline CVector steering_derivative(double phi, const ArrayConfig& cfg) {
  cfg.validate();
  detail::check_angle(phi);
  const double k = 2.0 * kPi * cfg.element_spacing * std::sin(phi);
  const double dk = 2.0 * kPi * cfg.element_spacing * std::cos(phi);
  CVector d(cfg.num_antennas);
  for (int m = 0; m < cfg.num_antennas; ++m) d(m) = kJ * (dk * m) * std::polar(1.0, k * m);
  return d;
}

inline SteeringResponse steering_outer(double phi, const ArrayConfig& cfg) {
  SteeringResponse r;
  r.a = steering_vector(phi, cfg);
  r.a_dot = steering_derivative(phi, cfg);
  r.A = r.a * r.a.transpose();
  r.A_dot = r.a_dot * r.a.transpose() + r.a * r.a_dot.transpose();
  return r;
}

}  // namespace isac
