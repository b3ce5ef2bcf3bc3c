#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace facemotion {

// Shared on-disk container: a plain-text manifest followed by raw
// little-endian arrays in declaration order. Feature files, checkpoints and
// the toy head model all use it. The byte layout is documented in
// docs/formats.md.
enum class Dtype { f32, f64 };

struct ArrayEntry {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<std::size_t> shape;
  std::vector<double> data; // row-major; dtype controls the on-disk width

  std::size_t element_count() const;
};

struct ArrayFile {
  std::vector<std::pair<std::string, std::string>> meta; // ordered key/value
  std::vector<ArrayEntry> arrays;

  const ArrayEntry* find(const std::string& name) const;
  const ArrayEntry& at(const std::string& name) const; // data error if absent
  bool has_meta(const std::string& key) const;
  std::string meta_at(const std::string& key) const;

  void add_meta(const std::string& key, const std::string& value);
  void add(const std::string& name, Dtype dtype, std::vector<std::size_t> shape,
           std::vector<double> data);
  void add_matrix(const std::string& name, const Eigen::MatrixXd& m, Dtype dtype);
  Eigen::MatrixXd matrix_at(const std::string& name) const; // entry must be 2-D
};

void save_arrays(const ArrayFile& file, const std::string& path);
ArrayFile load_arrays(const std::string& path);

} // namespace facemotion
