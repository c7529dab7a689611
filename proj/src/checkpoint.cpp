#include "nxm/checkpoint.hpp"

#include <limits>

#include "nxm/binary_io.hpp"

namespace nxm {

namespace {
constexpr char kMagic[] = "NXMW0001";
constexpr std::size_t kMagicLen = 8;
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params) {
  io::ByteWriter w;
  w.put_string(std::string(kMagic, kMagicLen));
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("parameter name too long: " + name);
    w.put_uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    const Tensor& t = params[i];
    w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put_uint<std::uint64_t>(d);
    for (double v : t.data()) w.put_f64(v);
  }
  return std::move(w.bytes());
}

ParameterSet deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(kMagicLen) != std::string(kMagic, kMagicLen))
    throw io::FormatError("not a checkpoint (bad magic)");
  const auto count = r.get_uint<std::uint32_t>();
  ParameterSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_uint<std::uint16_t>();
    std::string name = r.get_string(name_len);
    const auto rank = r.get_uint<std::uint32_t>();
    if (rank == 0) throw io::FormatError("tensor " + name + " has rank 0");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get_uint<std::uint64_t>();
      if (dim == 0) throw io::FormatError("tensor " + name + " has a zero dimension");
      shape.push_back(static_cast<std::size_t>(dim));
      numel *= shape.back();
    }
    if (r.remaining() / sizeof(double) < numel) throw io::FormatError("truncated payload for " + name);
    std::vector<double> data(numel);
    for (auto& v : data) v = r.get_f64();
    if (params.contains(name)) throw io::FormatError("duplicate tensor " + name);
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw io::FormatError("trailing bytes after checkpoint");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  io::write_file(path, serialize_checkpoint(params));
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

void assign_parameters(ParameterSet& target, const ParameterSet& source) {
  if (target.names() != source.names())
    throw std::invalid_argument("checkpoint tensors do not match the model layout");
  for (std::size_t i = 0; i < target.size(); ++i) {
    require_same_shape(target[i], source[i], "checkpoint tensor " + target.name(i));
    target[i] = source[i];
  }
}

}  // namespace nxm
