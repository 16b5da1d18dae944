#include "refseg/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace refseg {

namespace {

constexpr char kMagic[] = "REFSEGCK1";

void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const uint64_t len = read_u64(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

void write_floats(std::ostream& out, const std::vector<float>& v) {
  write_u64(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_floats(std::istream& in) {
  const uint64_t n = read_u64(in);
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  return v;
}

}  // namespace

void save_checkpoint(const CheckpointData& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic) - 1);
  write_string(out, data.meta_json);
  write_u64(out, data.tensors.size());
  for (const auto& [name, entry] : data.tensors) {
    write_string(out, name);
    write_u64(out, entry.first.size());
    for (int d : entry.first) write_u64(out, static_cast<uint64_t>(d));
    write_floats(out, entry.second);
  }
  out.put(data.has_optimizer ? 1 : 0);
  if (data.has_optimizer) {
    write_u64(out, static_cast<uint64_t>(data.optimizer.t));
    write_u64(out, data.optimizer.m.size());
    for (const auto& [name, v] : data.optimizer.m) {
      write_string(out, name);
      write_floats(out, v);
    }
    write_u64(out, data.optimizer.v.size());
    for (const auto& [name, v] : data.optimizer.v) {
      write_string(out, name);
      write_floats(out, v);
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, sizeof(magic)) != kMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  CheckpointData data;
  data.meta_json = read_string(in);
  const uint64_t count = read_u64(in);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    const uint64_t ndim = read_u64(in);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u64(in));
    auto values = read_floats(in);
    data.tensors.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(values)));
  }
  const int has_opt = in.get();
  if (has_opt == 1) {
    data.has_optimizer = true;
    data.optimizer.t = static_cast<int64_t>(read_u64(in));
    const uint64_t nm = read_u64(in);
    for (uint64_t i = 0; i < nm; ++i) {
      std::string name = read_string(in);
      data.optimizer.m.emplace_back(std::move(name), read_floats(in));
    }
    const uint64_t nv = read_u64(in);
    for (uint64_t i = 0; i < nv; ++i) {
      std::string name = read_string(in);
      data.optimizer.v.emplace_back(std::move(name), read_floats(in));
    }
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return data;
}

void collect_tensors(const NamedTensors<float>& named, CheckpointData& out) {
  for (const auto& [name, t] : named.params)
    out.tensors.emplace_back(name, std::make_pair(t.shape(), t.value()));
  for (const auto& [name, t] : named.buffers)
    out.tensors.emplace_back(name, std::make_pair(t.shape(), t.value()));
}

void restore_tensors(const CheckpointData& data, NamedTensors<float>& named) {
  auto restore = [&](const std::string& name, Tensor& t) {
    for (const auto& [n, entry] : data.tensors) {
      if (n != name) continue;
      if (entry.first != t.shape())
        throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                                 shape_str(entry.first) + " but the model expects " +
                                 shape_str(t.shape()));
      t.value() = entry.second;
      return;
    }
    throw std::runtime_error("checkpoint: tensor missing: " + name);
  };
  for (auto& [name, t] : named.params) restore(name, t);
  for (auto& [name, t] : named.buffers) restore(name, t);
}

}  // namespace refseg
