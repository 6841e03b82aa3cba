#include "fedplatoon/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace fedplatoon {
namespace {

constexpr std::array<char, 4> kMagic = {'F', 'P', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxElements = std::uint64_t(1) << 32;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw LoadError("tensor stream truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename Derived>
NamedTensor from_matrix(std::string name, const Eigen::MatrixBase<Derived>& m, bool is_vector) {
  NamedTensor t;
  t.name = std::move(name);
  if (is_vector) {
    t.shape = {std::uint64_t(m.size())};
  } else {
    t.shape = {std::uint64_t(m.rows()), std::uint64_t(m.cols())};
  }
  t.values.resize(m.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.values.data(), m.rows(),
                                                                                       m.cols()) = m;
  return t;
}

template <typename Tensor>
void fill_from(const NamedTensor& t, Tensor& dst) {
  const bool is_matrix = Tensor::ColsAtCompileTime != 1;
  const std::vector<std::uint64_t> expected =
      is_matrix ? std::vector<std::uint64_t>{std::uint64_t(dst.rows()), std::uint64_t(dst.cols())}
                : std::vector<std::uint64_t>{std::uint64_t(dst.size())};
  if (t.shape != expected) throw LoadError("tensor '" + t.name + "' has an unexpected shape");
  dst = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.values.data(), dst.rows(), dst.cols());
}

std::map<std::string, const NamedTensor*> index_by_name(std::span<const NamedTensor> tensors) {
  std::map<std::string, const NamedTensor*> out;
  for (const auto& t : tensors) {
    if (!out.emplace(t.name, &t).second) throw LoadError("duplicate tensor '" + t.name + "'");
  }
  return out;
}

const NamedTensor& require(const std::map<std::string, const NamedTensor*>& by_name, const std::string& name) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw LoadError("missing tensor '" + name + "'");
  return *it->second;
}

}  // namespace

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, std::uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    if (element_count(t.shape) != t.values.size()) throw ShapeError("tensor '" + t.name + "' shape/data mismatch");
    put<std::uint32_t>(out, std::uint32_t(t.name.size()));
    out.write(t.name.data(), std::streamsize(t.name.size()));
    put<std::uint32_t>(out, std::uint32_t(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    for (double v : t.values) put<double>(out, v);
  }
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw LoadError("not a tensor file (bad magic)");
  if (get<std::uint32_t>(in) != kVersion) throw LoadError("unsupported tensor file version");
  const auto count = get<std::uint32_t>(in);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const auto name_len = get<std::uint32_t>(in);
    if (name_len > 4096) throw LoadError("tensor name too long");
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) throw LoadError("tensor stream truncated");
    const auto ndim = get<std::uint32_t>(in);
    if (ndim > 8) throw LoadError("tensor rank too large");
    t.shape.resize(ndim);
    for (auto& d : t.shape) d = get<std::uint64_t>(in);
    const auto n = element_count(t.shape);
    if (n > kMaxElements) throw LoadError("tensor too large");
    t.values.resize(n);
    for (auto& v : t.values) v = get<double>(in);
  }
  return tensors;
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return read_tensors(in);
}

std::vector<NamedTensor> network_tensors(const nn::NetworkSpec& spec, const nn::NetworkParams<double>& params) {
  const auto names = spec.layer_names();
  if (names.size() != params.layers.size()) throw ShapeError("parameters do not match spec");
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    nn::for_each_tensor(params.layers[l], [&](const char* what, const auto& t) {
      using T = std::decay_t<decltype(t)>;
      out.push_back(from_matrix(names[l] + "." + what, t, T::ColsAtCompileTime == 1));
    });
  }
  return out;
}

nn::NetworkParams<double> network_from_tensors(const nn::NetworkSpec& spec, std::span<const NamedTensor> tensors) {
  spec.validate();
  const auto by_name = index_by_name(tensors);
  const auto specs = spec.layers();
  const auto names = spec.layer_names();
  nn::NetworkParams<double> params;
  params.layers.resize(specs.size());
  std::size_t used = 0;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    auto& p = params.layers[l];
    p.weight.resize(specs[l].fan_out, specs[l].fan_in);
    p.bias.resize(specs[l].fan_out);
    if (specs[l].batch_norm) {
      p.gain.resize(specs[l].fan_out);
      p.shift.resize(specs[l].fan_out);
      p.running_mean.resize(specs[l].fan_out);
      p.running_var.resize(specs[l].fan_out);
    }
    nn::for_each_tensor(p, [&](const char* what, auto& t) {
      fill_from(require(by_name, names[l] + "." + what), t);
      ++used;
    });
  }
  if (used != tensors.size()) throw LoadError("tensor file holds tensors this network does not have");
  return params;
}

std::vector<NamedTensor> optimizer_tensors(const nn::NetworkSpec& spec, const nn::OptimizerState<double>& state) {
  const auto names = spec.layer_names();
  std::vector<NamedTensor> out;
  out.push_back({"config", {4},
                 {state.config.learning_rate, state.config.beta1, state.config.beta2, state.config.epsilon}});
  out.push_back({"step", {1}, {double(state.step)}});
  auto add = [&](const char* prefix, const nn::Gradients<double>& g) {
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      nn::for_each_trainable(g.layers[l], [&](const char* what, const auto& t) {
        using T = std::decay_t<decltype(t)>;
        out.push_back(from_matrix(std::string(prefix) + names[l] + "." + what, t, T::ColsAtCompileTime == 1));
      });
    }
  };
  add("m.", state.first_moment);
  add("v.", state.second_moment);
  return out;
}

nn::OptimizerState<double> optimizer_from_tensors(const nn::NetworkSpec& spec, const nn::NetworkParams<double>& params,
                                                  std::span<const NamedTensor> tensors) {
  const auto by_name = index_by_name(tensors);
  const auto& config = require(by_name, "config");
  const auto& step = require(by_name, "step");
  if (config.values.size() != 4 || step.values.size() != 1) throw LoadError("malformed optimizer header");
  nn::AdamConfig cfg{config.values[0], config.values[1], config.values[2], config.values[3]};
  auto state = nn::make_optimizer_state(params, cfg);
  state.step = static_cast<std::int64_t>(step.values[0]);
  const auto names = spec.layer_names();
  auto fill = [&](const char* prefix, nn::Gradients<double>& g) {
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      nn::for_each_trainable(g.layers[l], [&](const char* what, auto& t) {
        fill_from(require(by_name, std::string(prefix) + names[l] + "." + what), t);
      });
    }
  };
  fill("m.", state.first_moment);
  fill("v.", state.second_moment);
  return state;
}

NamedTensor flat_tensor(std::string name, const Eigen::VectorXd& flat) {
  return {std::move(name), {std::uint64_t(flat.size())}, std::vector<double>(flat.data(), flat.data() + flat.size())};
}

Eigen::VectorXd flat_from_tensor(const NamedTensor& tensor) {
  if (tensor.shape.size() != 1) throw LoadError("tensor '" + tensor.name + "' is not a flat vector");
  return Eigen::Map<const Eigen::VectorXd>(tensor.values.data(), Eigen::Index(tensor.values.size()));
}

}  // namespace fedplatoon
