#pragma once

#include <filesystem>

#include "msconv/tensor.hpp"

namespace msconv {

// Tensor container, fixed little-endian layout so fixtures are bit-comparable
// across platforms:
//   magic   4 bytes "MST1"
//   dtype   1 byte  (0 = float64 LE, 1 = float32 LE)
//   ndim    1 byte  (0..4; writers emit 4)
//   dims    ndim x uint64 LE
//   payload row-major values, exactly numel * dtype size bytes

/// Writes float64; read(write(t)) is bit-identical.
void write_tensor(const Tensor& t, const std::filesystem::path& path);

/// Writes float32 (values narrowed); readers widen back to float64.
void write_tensor_f32(const Tensor& t, const std::filesystem::path& path);

/// Reads either dtype; shapes with fewer than 4 dims gain leading 1s.
/// Bad magic, truncated payloads and unknown dtypes raise IoError with
/// distinct codes.
Tensor read_tensor(const std::filesystem::path& path);

} // namespace msconv
