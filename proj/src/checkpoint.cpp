// SPDX-License-Identifier: Apache-2.0

#include "eclip/checkpoint.hpp"

#include <cstring>
#include <map>

#include "eclip/errors.hpp"
#include "eclip/tensor_io.hpp"

namespace eclip {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'L', 'P'};

void put_named(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  bytes::put_string(out, name);
  encode_tensor(out, t);
}

void fill(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                      shape_str(dst.shape()));
  }
  auto d = dst.mutable_data();
  std::copy(src.data().begin(), src.data().end(), d.begin());
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& st) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  bytes::put_u32(out, kCheckpointVersion);
  nlohmann::json cfg;
  to_json(cfg, st.config);
  bytes::put_string(out, cfg.dump());

  const auto& p = st.progress;
  bytes::put_u32(out, static_cast<std::uint32_t>(p.stage));
  bytes::put_u64(out, p.epoch);
  bytes::put_u64(out, p.batch);
  bytes::put_u64(out, p.stage_step);
  bytes::put_u64(out, p.global_step);
  bytes::put_u16(out, p.momentum_ready ? 1 : 0);
  bytes::put_u64(out, st.query_ema_updates);
  bytes::put_string(out, st.rng.state());

  std::vector<std::pair<std::string, Tensor>> named;
  const auto params = st.model.parameters();
  for (const auto& prm : params) named.emplace_back("base/" + prm.name, prm.tensor);
  if (p.momentum_ready) {
    for (const auto& prm : st.momentum.model().parameters()) named.emplace_back("mom/" + prm.name, prm.tensor);
  }
  for (const auto& [name, slot] : st.optimizer.slots()) {
    const Shape shape{slot.m.size()};
    named.emplace_back("opt/m/" + name, Tensor::from(shape, slot.m));
    named.emplace_back("opt/v/" + name, Tensor::from(shape, slot.v));
    named.emplace_back("opt/t/" + name, Tensor::scalar(static_cast<double>(slot.t)));
  }
  if (!st.queue.empty()) named.emplace_back("queue", st.queue.contents());
  const auto d = st.config.model.decoder.embed_dim;
  named.emplace_back("query_ema", Tensor::from({st.config.num_queries, d}, st.query_ema));

  bytes::put_u64(out, named.size());
  for (const auto& [name, t] : named) put_named(out, name, t);
  return out;
}

TrainState deserialize_checkpoint(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  const auto magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  TrainConfig cfg;
  try {
    from_json(nlohmann::json::parse(in.string()), cfg);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  TrainState st = TrainState::fresh(cfg);
  auto& p = st.progress;
  p.stage = static_cast<int>(in.u32());
  if (p.stage < 1 || p.stage > 3) throw FormatError("checkpoint: invalid stage");
  p.epoch = in.u64();
  p.batch = in.u64();
  p.stage_step = in.u64();
  p.global_step = in.u64();
  p.momentum_ready = in.u16() != 0;
  st.query_ema_updates = in.u64();
  try {
    st.rng.set_state(in.string());
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint RNG state: ") + e.what());
  }

  std::map<std::string, Tensor> named;
  const auto count = in.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    auto name = in.string();
    auto t = decode_tensor(in);
    if (!named.emplace(std::move(name), std::move(t)).second) throw FormatError("checkpoint: duplicate tensor");
  }
  if (!in.at_end()) throw FormatError("checkpoint: trailing bytes");

  auto take = [&](const std::string& name) -> Tensor {
    auto it = named.find(name);
    if (it == named.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    Tensor t = it->second;
    named.erase(it);
    return t;
  };

  for (auto& prm : st.model.parameters()) {
    const auto name = "base/" + prm.name;
    fill(prm.tensor, take(name), name);
  }
  if (p.momentum_ready) {
    st.momentum = MomentumModel(st.model, cfg.momentum);
    for (auto& prm : st.momentum.model().parameters()) {
      const auto name = "mom/" + prm.name;
      fill(prm.tensor, take(name), name);
    }
  }
  for (const auto& prm : st.model.parameters()) {
    if (!named.count("opt/m/" + prm.name)) continue;
    AdamW::Slot slot;
    const auto m = take("opt/m/" + prm.name);
    const auto v = take("opt/v/" + prm.name);
    const auto t = take("opt/t/" + prm.name);
    if (m.numel() != prm.tensor.numel() || v.numel() != prm.tensor.numel() || t.numel() != 1) {
      throw FormatError("checkpoint: optimizer state size mismatch for '" + prm.name + "'");
    }
    slot.m = m.to_vector();
    slot.v = v.to_vector();
    slot.t = static_cast<std::uint64_t>(t.item());
    st.optimizer.slots()[prm.name] = std::move(slot);
  }
  if (named.count("queue")) {
    const auto q = take("queue");
    if (q.rank() != 2 || q.dim(1) != st.queue.dim() || q.dim(0) > st.queue.capacity()) {
      throw FormatError("checkpoint: queue shape " + shape_str(q.shape()));
    }
    try {
      st.queue.enqueue(q);
    } catch (const Error& e) {
      throw FormatError(std::string("checkpoint queue: ") + e.what());
    }
  }
  const auto ema = take("query_ema");
  if (ema.numel() != st.query_ema.size()) throw FormatError("checkpoint: query_ema size mismatch");
  st.query_ema = ema.to_vector();
  if (!named.empty()) throw FormatError("checkpoint: unexpected tensor '" + named.begin()->first + "'");
  return st;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const auto data = serialize_checkpoint(state);
  auto tmp = path;
  tmp += ".tmp";
  bytes::write_file(tmp, data);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw InputError("cannot write checkpoint " + path.string());
  }
}

TrainState load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(bytes::read_file(path)); }

}  // namespace eclip
