#pragma once

// Checkpoints are a text manifest (<base>.manifest: header key=value lines
// plus ordered tensor names and shapes) and one flat little-endian binary
// blob (<base>.bin) of all parameters concatenated in manifest order.
// Round-trips are bit-exact.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qag/error.hpp"
#include "qag/tensor.hpp"

namespace qag {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

struct CheckpointHeader {
  std::map<std::string, std::string> kv;

  std::string get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError("checkpoint header: missing key " + key);
    return it->second;
  }
};

namespace detail {

template <typename S>
const char* dtype_name() {
  if constexpr (sizeof(S) == 4) return "f32";
  else return "f64";
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& base,
                     const std::vector<std::pair<std::string, TensorT<S>*>>& tensors,
                     const CheckpointHeader& header = {}) {
  std::ofstream manifest(base + ".manifest");
  if (!manifest) throw IoError("checkpoint: cannot write " + base + ".manifest");
  std::ofstream blob(base + ".bin", std::ios::binary);
  if (!blob) throw IoError("checkpoint: cannot write " + base + ".bin");
  manifest << "qag-checkpoint v1\n";
  manifest << "dtype " << detail::dtype_name<S>() << "\n";
  for (const auto& [k, v] : header.kv) manifest << "header " << k << "=" << v << "\n";
  for (const auto& [name, t] : tensors) {
    manifest << "tensor " << name;
    for (int d : t->shape()) manifest << " " << d;
    manifest << "\n";
    blob.write(reinterpret_cast<const char*>(t->data().data()),
               static_cast<std::streamsize>(t->numel() * sizeof(S)));
  }
  if (!manifest || !blob) throw IoError("checkpoint: write failed for " + base);
}

inline CheckpointHeader read_checkpoint_header(const std::string& base) {
  std::ifstream manifest(base + ".manifest");
  if (!manifest) throw IoError("checkpoint: cannot read " + base + ".manifest");
  std::string line;
  if (!std::getline(manifest, line) || line != "qag-checkpoint v1")
    throw ValidationError("checkpoint: " + base + ".manifest has an unknown format line");
  CheckpointHeader h;
  while (std::getline(manifest, line)) {
    if (line.rfind("header ", 0) != 0) continue;
    auto body = line.substr(7);
    auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ValidationError("checkpoint: malformed header line: " + line);
    h.kv[body.substr(0, eq)] = body.substr(eq + 1);
  }
  return h;
}

// Loads blob data into the given tensors; names and shapes must match the
// manifest exactly, in order.
template <typename S>
CheckpointHeader load_checkpoint(const std::string& base,
                                 const std::vector<std::pair<std::string, TensorT<S>*>>& tensors) {
  std::ifstream manifest(base + ".manifest");
  if (!manifest) throw IoError("checkpoint: cannot read " + base + ".manifest");
  std::ifstream blob(base + ".bin", std::ios::binary);
  if (!blob) throw IoError("checkpoint: cannot read " + base + ".bin");

  std::string line;
  if (!std::getline(manifest, line) || line != "qag-checkpoint v1")
    throw ValidationError("checkpoint: " + base + ".manifest has an unknown format line");
  CheckpointHeader header;
  std::size_t next = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "dtype") {
      std::string dt;
      is >> dt;
      if (dt != detail::dtype_name<S>())
        throw ValidationError("checkpoint: dtype " + dt + " does not match build dtype " +
                              detail::dtype_name<S>());
    } else if (tag == "header") {
      std::string body;
      std::getline(is, body);
      if (!body.empty() && body[0] == ' ') body.erase(0, 1);
      auto eq = body.find('=');
      if (eq == std::string::npos) throw ValidationError("checkpoint: malformed header line: " + line);
      header.kv[body.substr(0, eq)] = body.substr(eq + 1);
    } else if (tag == "tensor") {
      if (next >= tensors.size())
        throw ValidationError("checkpoint: manifest has more tensors than the model expects");
      std::string name;
      is >> name;
      Shape shape;
      int d;
      while (is >> d) shape.push_back(d);
      auto& [want_name, t] = tensors[next];
      if (name != want_name)
        throw ValidationError("checkpoint: tensor " + std::to_string(next) + " is '" + name +
                              "', expected '" + want_name + "'");
      if (shape != t->shape())
        throw ValidationError("checkpoint: tensor " + name + " has shape " + shape_str(shape) +
                              ", expected " + shape_str(t->shape()));
      blob.read(reinterpret_cast<char*>(t->data().data()),
                static_cast<std::streamsize>(t->numel() * sizeof(S)));
      if (!blob) throw ValidationError("checkpoint: blob " + base + ".bin is truncated at " + name);
      ++next;
    } else {
      throw ValidationError("checkpoint: unknown manifest line: " + line);
    }
  }
  if (next != tensors.size())
    throw ValidationError("checkpoint: manifest lists " + std::to_string(next) + " tensors, expected " +
                          std::to_string(tensors.size()));
  char extra;
  if (blob.read(&extra, 1))
    throw ValidationError("checkpoint: blob " + base + ".bin has trailing bytes");
  return header;
}

// FNV-1a over raw parameter bytes, for cheap equality checks in tests and
// logs.
template <typename S>
std::uint64_t params_checksum(const std::vector<std::pair<std::string, TensorT<S>*>>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data().data());
    for (std::size_t i = 0; i < t->numel() * sizeof(S); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace qag
