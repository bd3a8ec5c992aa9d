#include "fedhpd/snapshot.hpp"

#include <array>
#include <fstream>

#include "fedhpd/binary_io.hpp"

namespace fedhpd {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'H', 'P', 'D'};

void write_network(std::ostream& out, const Mlp<double>& net) {
  out.write(kMagic.data(), kMagic.size());
  binary::write<std::uint32_t>(out, kSnapshotVersion);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.input_dim));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.output_dim));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.activation));
  }
  binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(net.param_count()));
  for (Index i = 0; i < net.param_count(); ++i) binary::write<double>(out, net.params()(i));
}

Mlp<double> read_network(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("snapshot: bad magic");
  const auto version = binary::read<std::uint32_t>(in, "snapshot version");
  if (version != kSnapshotVersion) throw IoError("snapshot: unsupported version " + std::to_string(version));
  const auto count = binary::read<std::uint32_t>(in, "layer count");
  if (count == 0 || count > 1024) throw IoError("snapshot: implausible layer count");
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec l;
    l.input_dim = binary::read<std::uint32_t>(in, "layer input_dim");
    l.output_dim = binary::read<std::uint32_t>(in, "layer output_dim");
    const auto tag = binary::read<std::uint32_t>(in, "activation tag");
    if (tag > static_cast<std::uint32_t>(Activation::Identity)) throw IoError("snapshot: unknown activation tag");
    l.activation = static_cast<Activation>(tag);
    layers.push_back(l);
  }
  Mlp<double> net(std::move(layers));
  const auto n = binary::read<std::uint64_t>(in, "parameter count");
  if (n != static_cast<std::uint64_t>(net.param_count()))
    throw IoError("snapshot: parameter count does not match the layer table");
  VectorXd params(net.param_count());
  for (Index i = 0; i < params.size(); ++i) params(i) = binary::read<double>(in, "parameters");
  if (!params.allFinite()) throw IoError("snapshot: non-finite parameters");
  net.set_params(params);
  return net;
}

}  // namespace

void write_snapshot(std::ostream& out, const Mlp<double>& net) {
  write_network(out, net);
  binary::write<std::uint32_t>(out, 0);
  binary::write<std::uint32_t>(out, 0);
}

Mlp<double> read_network_snapshot(std::istream& in) {
  Mlp<double> net = read_network(in);
  binary::read<std::uint32_t>(in, "head tag");
  const auto n = binary::read<std::uint32_t>(in, "log_std count");
  for (std::uint32_t i = 0; i < n; ++i) binary::read<double>(in, "log_std");
  return net;
}

void write_snapshot(std::ostream& out, const Policy& policy) {
  write_network(out, policy.net());
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(policy.kind()));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(policy.log_std().size()));
  for (Index i = 0; i < policy.log_std().size(); ++i) binary::write<double>(out, policy.log_std()(i));
}

Policy read_policy_snapshot(std::istream& in) {
  Mlp<double> net = read_network(in);
  const auto head = binary::read<std::uint32_t>(in, "head tag");
  const auto n = binary::read<std::uint32_t>(in, "log_std count");
  VectorXd log_std(n);
  for (std::uint32_t i = 0; i < n; ++i) log_std(i) = binary::read<double>(in, "log_std");
  if (head == static_cast<std::uint32_t>(HeadKind::Categorical)) {
    if (n != 0) throw IoError("snapshot: categorical policy with log_std entries");
    return Policy::categorical(std::move(net));
  }
  if (head == static_cast<std::uint32_t>(HeadKind::Gaussian)) return Policy::gaussian(std::move(net), log_std);
  throw IoError("snapshot: file holds a bare network, not a policy");
}

void save_policy(const std::filesystem::path& path, const Policy& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_snapshot(out, policy);
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_policy_snapshot(in);
}

}  // namespace fedhpd
