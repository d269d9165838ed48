#include "sfmnerf/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "sfmnerf/error.hpp"

namespace sfmnerf {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'F', 'M', 'N', 'E', 'R', 'F', '\x01'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) {
      throw IoError("cannot write checkpoint " + path);
    }
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_floats(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      put(static_cast<float>(m.data()[i]));
    }
  }
  void raw(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) {
      throw IoError("failed writing checkpoint " + path_);
    }
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) {
      throw IoError("cannot open checkpoint " + path);
    }
  }
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) {
      throw IoError("truncated checkpoint " + path_);
    }
    return v;
  }
  void get_floats(Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<double>(get<float>());
    }
  }
  void raw(char* data, std::size_t n) {
    in_.read(data, static_cast<std::streamsize>(n));
    if (!in_) {
      throw IoError("truncated checkpoint " + path_);
    }
  }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
};

void write_network(Writer& w, const MlpWeights& net, const AdamState& adam) {
  const MlpConfig& c = net.config;
  for (int v : {c.depth, c.width, c.skip_layer, c.color_width, c.position.num_freqs,
                c.direction.num_freqs, static_cast<int>(c.position.include_input),
                static_cast<int>(c.direction.include_input),
                static_cast<int>(c.density_activation)}) {
    w.put<std::int32_t>(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
    w.put_floats(l.weight);
    w.put_floats(l.bias);
  }
  w.put<std::int64_t>(adam.step);
  w.put<double>(adam.lr);
  w.put<double>(adam.beta1);
  w.put<double>(adam.beta2);
  w.put<double>(adam.epsilon);
  if (adam.first_moment.size() != net.layers.size() ||
      adam.second_moment.size() != net.layers.size()) {
    throw ShapeMismatchError("checkpoint: optimizer state does not match the network");
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    w.put_floats(adam.first_moment[i].weight);
    w.put_floats(adam.first_moment[i].bias);
    w.put_floats(adam.second_moment[i].weight);
    w.put_floats(adam.second_moment[i].bias);
  }
}

void read_network(Reader& r, MlpWeights& net, AdamState& adam) {
  MlpConfig c;
  c.depth = r.get<std::int32_t>();
  c.width = r.get<std::int32_t>();
  c.skip_layer = r.get<std::int32_t>();
  c.color_width = r.get<std::int32_t>();
  c.position.num_freqs = r.get<std::int32_t>();
  c.direction.num_freqs = r.get<std::int32_t>();
  c.position.include_input = r.get<std::int32_t>() != 0;
  c.direction.include_input = r.get<std::int32_t>() != 0;
  c.density_activation = static_cast<DensityActivation>(r.get<std::int32_t>());
  c.validate();
  // Build the expected shapes from the configuration and check them.
  Rng dummy(0);
  net = init_mlp(c, dummy);
  const auto layer_count = r.get<std::uint32_t>();
  if (layer_count != net.layers.size()) {
    throw IoError("checkpoint " + r.path() + ": layer count does not match architecture");
  }
  for (auto& l : net.layers) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (rows != l.weight.rows() || cols != l.weight.cols()) {
      throw IoError("checkpoint " + r.path() + ": layer shape does not match architecture");
    }
    r.get_floats(l.weight);
    r.get_floats(l.bias);
  }
  adam = make_adam(net);
  adam.step = r.get<std::int64_t>();
  adam.lr = r.get<double>();
  adam.beta1 = r.get<double>();
  adam.beta2 = r.get<double>();
  adam.epsilon = r.get<double>();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    r.get_floats(adam.first_moment[i].weight);
    r.get_floats(adam.first_moment[i].bias);
    r.get_floats(adam.second_moment[i].weight);
    r.get_floats(adam.second_moment[i].bias);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Write to a temporary then rename so a crash never leaves a torn file.
  const std::string tmp = path + ".tmp";
  {
    Writer w(tmp);
    w.raw(kMagic.data(), kMagic.size());
    w.put<std::uint64_t>(ckpt.step);
    w.put<std::uint32_t>(2);
    write_network(w, ckpt.coarse, ckpt.coarse_adam);
    write_network(w, ckpt.fine, ckpt.fine_adam);
    w.finish();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot move checkpoint into place at " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  std::array<char, 8> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kMagic) {
    throw IoError(path + " is not a checkpoint (bad magic)");
  }
  Checkpoint ckpt;
  ckpt.step = r.get<std::uint64_t>();
  if (r.get<std::uint32_t>() != 2) {
    throw IoError("checkpoint " + path + ": expected two networks");
  }
  read_network(r, ckpt.coarse, ckpt.coarse_adam);
  read_network(r, ckpt.fine, ckpt.fine_adam);
  return ckpt;
}

}  // namespace sfmnerf
