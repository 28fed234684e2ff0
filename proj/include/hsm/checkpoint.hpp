#pragma once

// Checkpoint byte layout (all integers and floats little-endian):
//
//   char[8]  "HSMCKPT\0"
//   u32      format version (kCheckpointVersion)
//   u32      scalar width in bytes (4 = float32, 8 = float64)
//   u64 + n  ModelConfig JSON
//   u64 + n  meta JSON (epoch, rng state, metrics, ...)
//   u32      parameter count, then per parameter:
//              u32 + n name, u64 rows, u64 cols, rows*cols scalars row-major
//   u8       1 if optimizer state follows, else 0; when 1:
//              u64 step, then per parameter m (rows*cols) followed by v
//   char[8]  "HSMCEND\0"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hsm/errors.hpp"
#include "hsm/model.hpp"
#include "hsm/optimizer.hpp"

namespace hsm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix<S>>> parameters;
  std::optional<AdamWState<S>> optimizer;
};

namespace detail {

inline constexpr char kMagic[8] = {'H', 'S', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr char kEndMagic[8] = {'H', 'S', 'M', 'C', 'E', 'N', 'D', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(buf, sizeof(T));
}

inline void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide) {
    put<std::uint64_t>(out, s.size());
  } else {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  }
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename S>
void put_matrix(std::ostream& out, const Matrix<S>& m) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(S)));
  } else {
    for (Index i = 0; i < m.size(); ++i) put<S>(out, m.data()[i]);
  }
}

class Reader {
 public:
  Reader(std::istream& in, std::string path, std::uint64_t size) : in_(in), path_(std::move(path)), left_(size) {}

  void bytes(char* dst, std::size_t n) {
    require(n);
    in_.read(dst, static_cast<std::streamsize>(n));
    left_ -= n;
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw TruncatedFileError(path_ + ": file ends early (wanted " + std::to_string(n) + " more bytes)");
    }
  }

  template <typename T>
  T get() {
    char buf[sizeof(T)];
    bytes(buf, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string string(bool wide) {
    const std::uint64_t n = wide ? get<std::uint64_t>() : get<std::uint32_t>();
    require(n);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  template <typename S>
  Matrix<S> matrix(Index rows, Index cols, std::uint32_t width) {
    if (rows < 0 || cols < 0) throw CheckpointError(path_ + ": negative tensor shape");
    require(static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * width);
    Matrix<S> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      m.data()[i] = width == 8 ? static_cast<S>(get<double>()) : static_cast<S>(get<float>());
    }
    return m;
  }

  void require(std::uint64_t n) const {
    if (n > left_) {
      throw TruncatedFileError(path_ + ": file ends early (wanted " + std::to_string(n) + " bytes, " +
                               std::to_string(left_) + " left)");
    }
  }

 private:
  std::istream& in_;
  std::string path_;
  std::uint64_t left_;
};

}  // namespace detail

template <typename S>
void write_checkpoint(const std::filesystem::path& path, const Checkpoint<S>& ck) {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(detail::kMagic, 8);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, sizeof(S));
    detail::put_string(out, nlohmann::json(ck.config).dump(), true);
    detail::put_string(out, ck.meta.dump(), true);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.parameters.size()));
    for (const auto& [name, m] : ck.parameters) {
      detail::put_string(out, name, false);
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      detail::put_matrix(out, m);
    }
    detail::put<std::uint8_t>(out, ck.optimizer ? 1 : 0);
    if (ck.optimizer) {
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(ck.optimizer->step));
      for (size_t i = 0; i < ck.optimizer->m.size(); ++i) {
        detail::put_matrix(out, ck.optimizer->m[i]);
        detail::put_matrix(out, ck.optimizer->v[i]);
      }
    }
    out.write(detail::kEndMagic, 8);
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename S>
Checkpoint<S> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  detail::Reader r(in, path.string(), std::filesystem::file_size(path));
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, detail::kMagic, 8) != 0) throw CheckpointError(path.string() + ": not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(path.string() + ": format version " + std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
  }
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) throw CheckpointError(path.string() + ": bad scalar width " + std::to_string(width));

  Checkpoint<S> ck;
  try {
    ck.config = nlohmann::json::parse(r.string(true)).get<ModelConfig>();
    ck.meta = nlohmann::json::parse(r.string(true));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt header: " + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string(false);
    const auto rows = static_cast<Index>(r.get<std::uint64_t>());
    const auto cols = static_cast<Index>(r.get<std::uint64_t>());
    ck.parameters.emplace_back(std::move(name), r.matrix<S>(rows, cols, width));
  }
  if (r.get<std::uint8_t>() == 1) {
    AdamWState<S> st;
    st.step = static_cast<long long>(r.get<std::uint64_t>());
    for (const auto& [name, m] : ck.parameters) {
      st.m.push_back(r.matrix<S>(m.rows(), m.cols(), width));
      st.v.push_back(r.matrix<S>(m.rows(), m.cols(), width));
    }
    ck.optimizer = std::move(st);
  }
  char end[8];
  r.bytes(end, 8);
  if (std::memcmp(end, detail::kEndMagic, 8) != 0) throw TruncatedFileError(path.string() + ": missing end marker");
  return ck;
}

template <typename S>
void save_checkpoint(const Model<S>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object(), const AdamWState<S>* opt = nullptr) {
  Checkpoint<S> ck;
  ck.config = model.config();
  ck.meta = meta;
  for (const auto* p : model.parameters()) ck.parameters.emplace_back(p->name, p->value);
  if (opt) ck.optimizer = *opt;
  write_checkpoint(path, ck);
}

// Copies checkpoint tensors into an existing model. The model must have been
// built from the same config; every parameter must be present with its shape.
template <typename S>
void restore_parameters(Model<S>& model, const Checkpoint<S>& ck, const std::string& origin) {
  if (!(ck.config == model.config())) {
    throw ConfigMismatchError(origin + ": checkpoint config " + nlohmann::json(ck.config).dump() +
                              " differs from model config " + nlohmann::json(model.config()).dump());
  }
  if (ck.parameters.size() != model.parameters().size()) {
    throw ShapeMismatchError(origin + ": " + std::to_string(ck.parameters.size()) + " tensors stored, model has " +
                             std::to_string(model.parameters().size()));
  }
  for (size_t i = 0; i < ck.parameters.size(); ++i) {
    const auto& [name, m] = ck.parameters[i];
    Parameter<S>* p = model.find(name);
    if (p == nullptr) throw ShapeMismatchError(origin + ": tensor '" + name + "' does not exist in the model");
    if (p->value.rows() != m.rows() || p->value.cols() != m.cols()) {
      throw ShapeMismatchError(origin + ": tensor '" + name + "' stored as " + shape_string(m) + ", model expects " +
                               shape_string(p->value));
    }
  }
  for (const auto& [name, m] : ck.parameters) model.find(name)->value = m;
}

template <typename S>
Model<S> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr,
                         std::optional<AdamWState<S>>* opt = nullptr) {
  auto ck = read_checkpoint<S>(path);
  Model<S> model(ck.config, 0);
  restore_parameters(model, ck, path.string());
  if (meta) *meta = std::move(ck.meta);
  if (opt) *opt = std::move(ck.optimizer);
  return model;
}

template <typename S>
nlohmann::json load_checkpoint_into(Model<S>& model, const std::filesystem::path& path,
                                    AdamWState<S>* opt = nullptr) {
  auto ck = read_checkpoint<S>(path);
  restore_parameters(model, ck, path.string());
  if (opt) {
    if (!ck.optimizer) throw CheckpointError(path.string() + ": no optimizer state stored");
    *opt = std::move(*ck.optimizer);
  }
  return ck.meta;
}

}  // namespace hsm
