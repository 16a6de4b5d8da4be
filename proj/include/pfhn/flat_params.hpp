#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pfhn/matrix.hpp"

namespace pfhn {

// Named, ordered collection of dense tensors. Two FlatParams with the same
// layout (same names and shapes, in order) are element-wise combinable.
struct FlatParams {
    std::vector<std::pair<std::string, Matrix>> entries;

    Matrix* find(const std::string& name);
    const Matrix* find(const std::string& name) const;

    std::size_t total_size() const;
    bool same_layout(const FlatParams& o) const;

    static FlatParams zeros_like(const FlatParams& o);

    // this += a * x (layouts must match)
    void axpy(double a, const FlatParams& x);
    void scale(double a);
    double dot(const FlatParams& o) const;
    double norm() const;

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& v);
};

// Portable little-endian binary: magic, version, entry count, then per entry
// name length / name / rows / cols / raw doubles.
void save_flat_params(const std::string& path, const FlatParams& fp);
FlatParams load_flat_params(const std::string& path);

}  // namespace pfhn
