#include "ctdnet/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctdnet {

ad::Var ParamStore::insert(const std::string& name, Tensor value) {
  for (const auto& [n, v] : items_) {
    if (n == name) throw std::logic_error("duplicate parameter name '" + name + "'");
  }
  auto var = ad::parameter(std::move(value));
  items_.emplace_back(name, var);
  return var;
}

ad::Var ParamStore::create_uniform(const std::string& name, std::vector<int> shape, int fan_in,
                                   Rng& rng) {
  if (fan_in <= 0) throw std::invalid_argument("fan_in must be positive for '" + name + "'");
  const double s = std::sqrt(1.0 / fan_in);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
  return insert(name, std::move(t));
}

ad::Var ParamStore::create_const(const std::string& name, std::vector<int> shape, double value) {
  return insert(name, Tensor::full(std::move(shape), value));
}

std::vector<ad::Var> ParamStore::params() const {
  std::vector<ad::Var> out;
  out.reserve(items_.size());
  for (const auto& [n, v] : items_) out.push_back(v);
  return out;
}

ad::Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : items_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

void ParamStore::zero_grads() {
  for (auto& [n, v] : items_) v->zero_grad();
}

namespace {

constexpr char kMagic[4] = {'C', 'T', 'D', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint truncated while reading u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ad::Var>>& items) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, var] : items) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = var->value;
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) put_u32(os, static_cast<std::uint32_t>(t.extent(a)));
    for (std::int64_t i = 0; i < t.size(); ++i) put_f32(os, static_cast<float>(t[i]));
  }
  if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a CTDK checkpoint: " + path);
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(is);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint truncated in tensor name");
    const std::uint32_t rank = get_u32(is);
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(get_u32(is));
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(get_f32(is));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void load_into_store(const std::string& path, ParamStore& store) {
  auto loaded = load_checkpoint(path);
  if (loaded.size() != store.items().size()) {
    std::ostringstream os;
    os << "checkpoint has " << loaded.size() << " tensors but the model has "
       << store.items().size();
    throw std::runtime_error(os.str());
  }
  for (auto& [name, tensor] : loaded) {
    ad::Var var;
    try {
      var = store.find(name);
    } catch (const std::out_of_range&) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has no matching parameter");
    }
    if (!var->value.same_shape(tensor)) {
      throw std::runtime_error("checkpoint tensor '" + name + "' shape " + tensor.shape_str() +
                               " does not match model shape " + var->value.shape_str());
    }
    var->value = std::move(tensor);
  }
}

}  // namespace ctdnet
