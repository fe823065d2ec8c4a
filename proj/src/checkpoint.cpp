#include "ppnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace ppnet {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'P', 'P', 'N', 'C'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const fs::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) fail(ErrorKind::Format, path.string() + ": truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint_entries(const fs::path& path, const std::vector<CheckpointEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * sizeof(float)));
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint_entries(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::Format, path.string() + ": not a checkpoint file");
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion)
    fail(ErrorKind::Format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(in, path);
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    e.name.resize(get_u32(in, path));
    if (!in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) fail(ErrorKind::Format, path.string() + ": truncated name");
    e.dims.resize(get_u32(in, path));
    std::size_t n = 1;
    for (auto& d : e.dims) {
      d = get_u32(in, path);
      n *= d;
    }
    e.values.resize(n);
    if (!in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(n * sizeof(float))))
      fail(ErrorKind::Format, path.string() + ": truncated data for " + e.name);
  }
  return entries;
}

template <typename T>
void save_checkpoint(const fs::path& path, const NetworkParams<T>& params) {
  std::vector<CheckpointEntry> entries;
  for (const auto& t : params.tensors) {
    entries.push_back({t.name, std::vector<std::uint32_t>(t.shape.begin(), t.shape.end()),
                       std::vector<float>(t.values.begin(), t.values.end())});
  }
  for (std::size_t i = 0; i < params.bn.size(); ++i) {
    const auto& s = params.bn[i];
    const auto c = static_cast<std::uint32_t>(s.running_mean.size());
    entries.push_back({params.bn_names[i] + ".running_mean", {c}, std::vector<float>(s.running_mean.begin(), s.running_mean.end())});
    entries.push_back({params.bn_names[i] + ".running_var", {c}, std::vector<float>(s.running_var.begin(), s.running_var.end())});
  }
  write_checkpoint_entries(path, entries);
}

template <typename T>
void load_checkpoint(const fs::path& path, NetworkParams<T>& params) {
  std::map<std::string, CheckpointEntry> by_name;
  for (auto& e : read_checkpoint_entries(path)) by_name.emplace(e.name, std::move(e));

  auto take = [&](const std::string& name, const ad::Shape& shape, std::vector<T>& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorKind::Format, path.string() + ": checkpoint lacks '" + name + "'");
    const auto& e = it->second;
    if (!std::equal(e.dims.begin(), e.dims.end(), shape.begin(), shape.end()))
      fail(ErrorKind::Format, path.string() + ": '" + name + "' has shape " + ad::to_string(ad::Shape(e.dims.begin(), e.dims.end())) +
                                  ", expected " + ad::to_string(shape));
    dst.assign(e.values.begin(), e.values.end());
    by_name.erase(it);
  };
  for (auto& t : params.tensors) take(t.name, t.shape, t.values);
  for (std::size_t i = 0; i < params.bn.size(); ++i) {
    const ad::Shape shape{params.bn[i].running_mean.size()};
    take(params.bn_names[i] + ".running_mean", shape, params.bn[i].running_mean);
    take(params.bn_names[i] + ".running_var", shape, params.bn[i].running_var);
  }
  if (!by_name.empty()) fail(ErrorKind::Format, path.string() + ": unexpected entry '" + by_name.begin()->first + "'");
}

template void save_checkpoint<float>(const fs::path&, const NetworkParams<float>&);
template void save_checkpoint<double>(const fs::path&, const NetworkParams<double>&);
template void load_checkpoint<float>(const fs::path&, NetworkParams<float>&);
template void load_checkpoint<double>(const fs::path&, NetworkParams<double>&);

}  // namespace ppnet
