#pragma once

#include "qkck/linalg.hpp"

#include <string>
#include <vector>

namespace qkck {

// Reproducibility dump: one JSON object with a fixed key order and %.17g
// numbers, so identical inputs produce identical bytes.
//   {"kind": ..., "n": ..., "shape": [...], "convention": "lowered", "data": [...]}
std::string tensor_json(const std::string& kind, int n,
                        const std::vector<int>& shape,
                        const std::vector<double>& data);

void write_tensor_file(const std::string& path, const std::string& kind, int n,
                       const std::vector<int>& shape,
                       const std::vector<double>& data);

std::vector<double> flatten(const Tensor4& t);
std::vector<double> flatten(const Mat& m);

} // namespace qkck
