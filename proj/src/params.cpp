#include "asyncflow/params.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include <nlohmann/json.hpp>

namespace af {

Mat& ParameterStore::add(const std::string& name, Mat init) {
  require(!has(name), "ParameterStore: duplicate entry '" + name + "'");
  check_finite(init, "parameter '" + name + "'");
  ParamEntry e;
  e.grad = Mat::Zero(init.rows(), init.cols());
  e.value = std::move(init);
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

ParamEntry& ParameterStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  require(it != entries_.end(), "ParameterStore: unknown entry '" + name + "'");
  return it->second;
}

const ParamEntry& ParameterStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), "ParameterStore: unknown entry '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.setZero();
}

Mat fan_in_uniform(int rows, int cols, RngStream& rng) {
  const double a = std::sqrt(3.0 / double(rows));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = a * (2.0 * rng.uniform() - 1.0);
  return m;
}

namespace {

constexpr char kMagic[7] = {'A', 'F', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double x) {
  write_u64(os, std::bit_cast<std::uint64_t>(x));
}

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const nlohmann::json& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, store.size());
  for (const auto& [name, e] : store.entries()) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, 2);
    write_u64(os, static_cast<std::uint64_t>(e.value.rows()));
    write_u64(os, static_cast<std::uint64_t>(e.value.cols()));
    for (Eigen::Index i = 0; i < e.value.rows(); ++i)
      for (Eigen::Index j = 0; j < e.value.cols(); ++j) write_f64(os, e.value(i, j));
  }
  if (!os) throw IoError("write failed: " + path);
  os.close();

  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw IoError("cannot open checkpoint sidecar for writing: " + path + ".json");
  js << meta.dump(2) << "\n";
  if (!js) throw IoError("write failed: " + path + ".json");
}

nlohmann::json load_checkpoint(const std::string& path, ParameterStore& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + sizeof(kMagic), kMagic))
    throw IoError("bad checkpoint magic in " + path);
  const std::uint64_t count = read_u64(is);
  for (std::uint64_t n = 0; n < count; ++n) {
    const std::uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = read_u64(is);
    if (rank != 1 && rank != 2) throw IoError("unsupported tensor rank in " + path);
    std::uint64_t rows = read_u64(is);
    std::uint64_t cols = rank == 2 ? read_u64(is) : 1;
    if (rank == 1) std::swap(rows, cols);  // rank-1 entries load as row vectors
    Mat m(rows, cols);
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = read_f64(is);
    if (!is) throw IoError("truncated checkpoint: " + path);
    store.add(name, std::move(m));
  }

  std::ifstream js(path + ".json");
  if (!js) throw IoError("cannot open checkpoint sidecar: " + path + ".json");
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const std::exception& e) {
    throw IoError("bad checkpoint sidecar " + path + ".json: " + e.what());
  }
  return meta;
}

}  // namespace af
