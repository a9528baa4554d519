#include "viewflow/weights.hpp"

#include <algorithm>
#include <fstream>

#include "viewflow/binary_io.hpp"
#include "viewflow/error.hpp"

namespace viewflow {

void WeightContainer::add(std::string name, TensorF value) {
  if (contains(name)) throw ContractError("duplicate tensor name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

void WeightContainer::set(std::string name, TensorF value) {
  for (auto& e : entries_)
    if (e.name == name) {
      e.value = std::move(value);
      return;
    }
  entries_.push_back({std::move(name), std::move(value)});
}

const TensorF* WeightContainer::find(std::string_view name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
  return it == entries_.end() ? nullptr : &it->value;
}

const TensorF& WeightContainer::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw BindingError("missing tensor '" + std::string(name) + "'");
}

void write_weights(const std::filesystem::path& path, const WeightContainer& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  binary::Writer wr(out);
  wr.magic("VWTC");
  wr.uint<std::uint32_t>(1);
  wr.uint<std::uint32_t>(std::uint32_t(weights.size()));
  for (const auto& e : weights.entries()) {
    wr.uint<std::uint32_t>(std::uint32_t(e.name.size()));
    wr.bytes(e.name.data(), e.name.size());
    wr.uint<std::uint8_t>(0);
    wr.uint<std::uint8_t>(std::uint8_t(e.value.ndim()));
    for (auto d : e.value.shape()) wr.uint<std::uint64_t>(d);
    wr.floats(e.value.data());
  }
  if (!wr.good()) throw IoError("failed writing " + path.string());
}

WeightContainer read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  binary::Reader rd(in);
  rd.expect_magic("VWTC");
  const auto version = rd.uint<std::uint32_t>("version");
  if (version != 1) throw IntegrityError("unsupported VWTC version " + std::to_string(version), 4);
  const auto count = rd.uint<std::uint32_t>("tensor count");

  WeightContainer weights;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_offset = rd.offset();
    const auto name_len = rd.uint<std::uint32_t>("name length");
    if (name_len == 0 || name_len > (1u << 16))
      throw IntegrityError("implausible tensor name length at byte " + std::to_string(entry_offset), entry_offset);
    std::string name(name_len, '\0');
    rd.bytes(name.data(), name_len, "tensor name");
    const std::size_t dtype_offset = rd.offset();
    const auto dtype = rd.uint<std::uint8_t>("dtype");
    if (dtype != 0)
      throw IntegrityError("tensor '" + name + "': unsupported dtype code " + std::to_string(dtype), dtype_offset);
    const auto ndim = rd.uint<std::uint8_t>("ndim");
    if (ndim == 0) throw IntegrityError("tensor '" + name + "': rank 0", dtype_offset + 1);
    Shape shape(ndim);
    std::size_t total = 1;
    for (auto& d : shape) {
      const std::size_t dim_offset = rd.offset();
      d = rd.uint<std::uint64_t>("dims");
      if (d == 0 || d > (std::uint64_t{1} << 32) || total > (std::size_t{1} << 34) / d)
        throw IntegrityError("tensor '" + name + "': bad dimension", dim_offset);
      total *= d;
    }
    TensorF value(shape);
    rd.floats(value.data(), "tensor payload");
    if (!value.all_finite()) throw NumericError("tensor '" + name + "' contains NaN or Inf");
    if (weights.contains(name))
      throw IntegrityError("duplicate tensor name '" + name + "'", entry_offset);
    weights.add(std::move(name), std::move(value));
  }
  if (!rd.at_end()) throw IntegrityError("trailing bytes after last tensor", rd.offset());
  return weights;
}

}  // namespace viewflow
