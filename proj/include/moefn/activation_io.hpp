#pragma once

#include <string>

#include "moefn/modularity.hpp"

namespace moefn {

/// CSV: one row per token, comma separated. A first line containing any
/// non-numeric field is treated as a header. With labels_inline the last
/// column holds 1-based integer class labels.
ActivationMatrix read_activations_csv(const std::string& path, bool labels_inline);
void write_activations_csv(const std::string& path, const ActivationMatrix& acts);

/// Binary: "MOEACT1", u32 LE rows, u32 LE cols, rows*cols f64 LE, row-major.
/// Carries no labels.
ActivationMatrix read_activations_binary(const std::string& path);
void write_activations_binary(const std::string& path, const Matrix& values);

/// Picks the binary reader when the file starts with the magic, CSV otherwise.
/// Missing or malformed files throw ConfigError.
ActivationMatrix read_activations(const std::string& path, bool labels_inline);

}  // namespace moefn
