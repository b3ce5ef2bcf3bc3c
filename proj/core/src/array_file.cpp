#include "facemotion/array_file.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "facemotion/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "array container assumes a little-endian host");

namespace facemotion {

namespace {

bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') return false;
  return true;
}

const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  fail(Errc::corrupt_manifest, "unknown dtype '" + s + "'");
}

std::size_t dtype_width(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

} // namespace

std::size_t ArrayEntry::element_count() const {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

const ArrayEntry* ArrayFile::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const ArrayEntry& ArrayFile::at(const std::string& name) const {
  const ArrayEntry* e = find(name);
  require(e != nullptr, Errc::corrupt_manifest, "array '" + name + "' missing from file");
  return *e;
}

bool ArrayFile::has_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return true;
  return false;
}

std::string ArrayFile::meta_at(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  fail(Errc::corrupt_manifest, "meta key '" + key + "' missing from file");
}

void ArrayFile::add_meta(const std::string& key, const std::string& value) {
  require(valid_token(key), Errc::invalid_argument, "meta key must be a single token");
  meta.emplace_back(key, value);
}

void ArrayFile::add(const std::string& name, Dtype dtype, std::vector<std::size_t> shape,
                    std::vector<double> data) {
  require(valid_token(name), Errc::invalid_argument, "array name must be a single token");
  ArrayEntry e{name, dtype, std::move(shape), std::move(data)};
  require(e.element_count() == e.data.size(), Errc::dim_mismatch,
          "array '" + name + "': shape does not match data length");
  arrays.push_back(std::move(e));
}

void ArrayFile::add_matrix(const std::string& name, const Eigen::MatrixXd& m, Dtype dtype) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  add(name, dtype,
      {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(data));
}

Eigen::MatrixXd ArrayFile::matrix_at(const std::string& name) const {
  const ArrayEntry& e = at(name);
  require(e.shape.size() == 2, Errc::dim_mismatch, "array '" + name + "' is not 2-D");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = e.data[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

void save_arrays(const ArrayFile& file, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");

  out << "arrayfile 1\n";
  for (const auto& [k, v] : file.meta) out << "meta " << k << " " << v << "\n";
  for (const auto& a : file.arrays) {
    out << "array " << a.name << " " << dtype_name(a.dtype);
    for (std::size_t d : a.shape) out << " " << d;
    out << "\n";
  }
  out << "end\n";

  for (const auto& a : file.arrays) {
    if (a.dtype == Dtype::f32) {
      std::vector<float> buf(a.data.size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(a.data[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * 4));
    } else {
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * 8));
    }
  }
  require(out.good(), Errc::io, "write failed for '" + path + "'");
}

ArrayFile load_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open '" + path + "' for reading");

  ArrayFile file;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::corrupt_manifest, "empty file");
  require(line == "arrayfile 1", Errc::corrupt_manifest, "bad magic line '" + line + "'");

  bool saw_end = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      require(!key.empty(), Errc::corrupt_manifest, "meta line without key");
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(value.begin());
      file.meta.emplace_back(key, value);
    } else if (kind == "array") {
      ArrayEntry e;
      std::string dtype;
      ls >> e.name >> dtype;
      require(!e.name.empty() && !dtype.empty(), Errc::corrupt_manifest,
              "malformed array line '" + line + "'");
      e.dtype = parse_dtype(dtype);
      long long d = 0;
      while (ls >> d) {
        require(d >= 0, Errc::corrupt_manifest, "negative dimension in '" + line + "'");
        e.shape.push_back(static_cast<std::size_t>(d));
      }
      require(ls.eof(), Errc::corrupt_manifest, "trailing junk in '" + line + "'");
      file.arrays.push_back(std::move(e));
    } else {
      fail(Errc::corrupt_manifest, "unknown manifest line '" + line + "'");
    }
  }
  require(saw_end, Errc::corrupt_manifest, "manifest missing 'end'");

  for (auto& a : file.arrays) {
    std::size_t n = a.element_count();
    a.data.resize(n);
    if (a.dtype == Dtype::f32) {
      std::vector<float> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
      require(in.gcount() == static_cast<std::streamsize>(n * 4), Errc::truncated_payload,
              "array '" + a.name + "' payload truncated");
      for (std::size_t i = 0; i < n; ++i) a.data[i] = static_cast<double>(buf[i]);
    } else {
      in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * 8));
      require(in.gcount() == static_cast<std::streamsize>(n * 8), Errc::truncated_payload,
              "array '" + a.name + "' payload truncated");
    }
  }
  return file;
}

} // namespace facemotion
