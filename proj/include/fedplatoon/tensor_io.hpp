#pragma once

// Binary tensor container used for checkpoints and for flat-vector exchange.
//
// Layout (all integers and floats little-endian):
//   "FPTN"  u32 version  u32 count
//   count x { u32 name_len, name bytes, u32 ndim, ndim x u64 dim, prod(dim) x f64 (row-major) }

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedplatoon/adam.hpp"
#include "fedplatoon/dense_net.hpp"

namespace fedplatoon {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;  // row-major
};

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

std::vector<NamedTensor> network_tensors(const nn::NetworkSpec& spec, const nn::NetworkParams<double>& params);
nn::NetworkParams<double> network_from_tensors(const nn::NetworkSpec& spec, std::span<const NamedTensor> tensors);

std::vector<NamedTensor> optimizer_tensors(const nn::NetworkSpec& spec, const nn::OptimizerState<double>& state);
nn::OptimizerState<double> optimizer_from_tensors(const nn::NetworkSpec& spec, const nn::NetworkParams<double>& params,
                                                  std::span<const NamedTensor> tensors);

NamedTensor flat_tensor(std::string name, const Eigen::VectorXd& flat);
Eigen::VectorXd flat_from_tensor(const NamedTensor& tensor);

}  // namespace fedplatoon
