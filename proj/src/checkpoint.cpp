// Copyright 2026 The trfam Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "trfam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <system_error>

namespace trf {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr const char* kProvenanceSeparator = "---\n";

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, const std::filesystem::path& path) : is_(is), path_(path) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string bytes(std::size_t limit = 1u << 24) {
    const std::uint32_t n = u32();
    if (n > limit) {
      fail("string field of " + std::to_string(n) + " bytes");
    }
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      fail("truncated");
    }
  }
  [[noreturn]] void fail(const std::string& what) {
    throw std::runtime_error("checkpoint " + path_.string() + ": " + what);
  }

 private:
  std::ifstream& is_;
  const std::filesystem::path& path_;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) {
      return &t;
    }
  }
  return nullptr;
}

Checkpoint make_checkpoint(const AcousticModel<float>& model, CheckpointKind kind,
                           std::string provenance) {
  Checkpoint c;
  c.config = model.config();
  c.kind = kind;
  c.provenance = std::move(provenance);
  for (const auto& p : model.parameters().items()) {
    if (kind == CheckpointKind::kInference && p.training_only) {
      continue;
    }
    c.tensors.emplace_back(p.name, p.value.detach());
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    }
    Writer w(os);
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(checkpoint.kind));
    std::string header = to_text(checkpoint.config);
    if (!checkpoint.provenance.empty()) {
      header += kProvenanceSeparator;
      header += checkpoint.provenance;
    }
    w.bytes(header);
    w.u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& [name, t] : checkpoint.tensors) {
      w.bytes(name);
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) {
        w.u64(d);
      }
      auto v = t.data();
      w.raw(v.data(), v.size() * sizeof(float));
    }
    os.flush();
    if (!os) {
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  Reader r(is, path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    r.fail("bad magic");
  }
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  const std::uint32_t kind = r.u32();
  if (kind > 1) {
    r.fail("unknown kind " + std::to_string(kind));
  }
  c.kind = static_cast<CheckpointKind>(kind);
  std::string header = r.bytes();
  if (const auto sep = header.find(kProvenanceSeparator); sep != std::string::npos) {
    c.provenance = header.substr(sep + std::strlen(kProvenanceSeparator));
    header.resize(sep);
  }
  c.config = encoder_config_from_text(header);
  const std::uint32_t n = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.bytes(4096);
    if (!seen.insert(name).second) {
      r.fail("duplicate tensor " + name);
    }
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) {
      r.fail("tensor " + name + " has rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u64();
    }
    std::vector<float> values(numel(shape));
    r.raw(values.data(), values.size() * sizeof(float));
    c.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    r.fail("trailing bytes");
  }
  return c;
}

void save_model(const std::filesystem::path& path, const AcousticModel<float>& model,
                CheckpointKind kind, const std::string& provenance) {
  write_checkpoint(path, make_checkpoint(model, kind, provenance));
}

AcousticModel<float> model_from_checkpoint(const Checkpoint& checkpoint) {
  const bool training = checkpoint.kind == CheckpointKind::kTraining;
  AcousticModel<float> model(checkpoint.config, training);
  std::set<std::string> used;
  for (auto& p : model.parameters().items()) {
    const auto* t = checkpoint.find(p.name);
    if (!t) {
      throw std::runtime_error("checkpoint lacks parameter " + p.name);
    }
    if (t->shape() != p.value.shape()) {
      throw ShapeError("checkpoint parameter " + p.name + " is " + to_string(t->shape()) +
                       ", config expects " + to_string(p.value.shape()));
    }
    auto src = t->data();
    std::copy(src.begin(), src.end(), p.value.data().begin());
    used.insert(p.name);
  }
  for (const auto& [name, t] : checkpoint.tensors) {
    if (!used.count(name)) {
      throw std::runtime_error("checkpoint has unexpected tensor " + name);
    }
  }
  return model;
}

AcousticModel<float> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(read_checkpoint(path));
}

}  // namespace trf
