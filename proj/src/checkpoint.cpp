// Copyright 2026 The t5tts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "t5tts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace t5tts {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', '5', 'T', 'T', 'S', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& os, const std::string& name, const ad::Tensor& t) {
  put_string(os, name);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v;
    read(&v, sizeof(T));
    return v;
  }

  std::string get_string(std::uint64_t limit) {
    const auto n = get<std::uint64_t>();
    if (n > limit) fail("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  ad::Tensor get_tensor(std::string& name) {
    name = get_string(4096);
    const auto rank = get<std::uint32_t>();
    if (rank == 0 || rank > 8) fail("tensor '" + name + "' has rank " + std::to_string(rank));
    ad::Shape shape(rank);
    std::int64_t numel = 1;
    for (auto& d : shape) {
      d = get<std::int64_t>();
      if (d < 1 || d > (std::int64_t{1} << 32)) fail("tensor '" + name + "' has dimension " + std::to_string(d));
      numel *= d;
      if (numel > (std::int64_t{1} << 32)) fail("tensor '" + name + "' is too large");
    }
    ad::AlignedVector<float> data(static_cast<std::size_t>(numel));
    read(data.data(), data.size() * sizeof(float));
    return ad::Tensor(std::move(shape), std::move(data));
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + path_ + ": " + what);
  }

 private:
  void read(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated file");
  }

  std::istream& is_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams<float>& params,
                     const std::map<std::string, ad::Tensor>& extras) {
  const auto named = params.named();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, Checkpoint::kVersion);
    put_string(os, config.serialize());
    put<std::uint64_t>(os, named.size() + extras.size());
    for (const auto& [name, var] : named) put_tensor(os, name, var->value());
    for (const auto& [name, t] : extras) put_tensor(os, name, t);
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[sizeof(kMagic)];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  try {
    ck.config = ModelConfig::deserialize(r.get_string(1 << 16));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(std::string("bad config: ") + e.what());
  }
  ck.params = ModelParams<float>::init(ck.config, 0);
  std::map<std::string, ad::BasicVar<float>*> slots;
  for (auto& [name, var] : ck.params.named()) slots.emplace(name, var);

  const auto count = r.get<std::uint64_t>();
  if (count > (1u << 20)) r.fail("implausible tensor count " + std::to_string(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name;
    ad::Tensor t = r.get_tensor(name);
    auto it = slots.find(name);
    if (it == slots.end()) {
      if (!ck.extras.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
      continue;
    }
    if (it->second->shape() != t.shape()) {
      r.fail("tensor '" + name + "' has shape " + ad::shape_str(t.shape()) + ", config implies " +
             ad::shape_str(it->second->shape()));
    }
    it->second->mutable_value() = std::move(t);
    slots.erase(it);
  }
  if (!slots.empty()) r.fail("missing parameter '" + slots.begin()->first + "'");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.config == expected)) {
    throw CheckpointError("checkpoint " + path.string() + " was written for a different model config:\n" +
                          ck.config.serialize() + "expected:\n" + expected.serialize());
  }
  return ck;
}

}  // namespace t5tts
