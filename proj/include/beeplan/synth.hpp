// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "beeplan/codec.hpp" // Bytes

namespace beeplan {

/// IEEE-754 binary16 bits from a float, round-to-nearest-even.
std::uint16_t fp16_from_float(float value);
float float_from_fp16(std::uint16_t bits);

/// Deterministic standard-normal FP16 stream (little-endian elements),
/// the stand-in for activation tensors in demos and benchmarks. Uses an
/// explicit Box-Muller transform so the bytes are identical everywhere.
Bytes synth_gaussian_fp16(std::size_t elements, std::uint64_t seed);

} // namespace beeplan
