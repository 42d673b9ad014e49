#include "qkck/tensor_io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace qkck {

namespace {

void append_number(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

} // namespace

std::string tensor_json(const std::string& kind, int n,
                        const std::vector<int>& shape,
                        const std::vector<double>& data) {
    size_t expect = 1;
    for (int s : shape) expect *= static_cast<size_t>(s);
    if (expect != data.size())
        throw std::invalid_argument("tensor_json: shape does not match data size");
    std::string out;
    out.reserve(data.size() * 24 + 128);
    out += "{\"kind\":\"" + kind + "\",\"n\":" + std::to_string(n) + ",\"shape\":[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(shape[i]);
    }
    out += "],\"convention\":\"lowered\",\"data\":[";
    for (size_t i = 0; i < data.size(); ++i) {
        if (i) out += ',';
        append_number(out, data[i]);
    }
    out += "]}\n";
    return out;
}

void write_tensor_file(const std::string& path, const std::string& kind, int n,
                       const std::vector<int>& shape,
                       const std::vector<double>& data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open dump file: " + path);
    os << tensor_json(kind, n, shape, data);
}

std::vector<double> flatten(const Tensor4& t) { return t.data(); }

std::vector<double> flatten(const Mat& m) {
    std::vector<double> out;
    out.reserve(m.size());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    return out;
}

} // namespace qkck
