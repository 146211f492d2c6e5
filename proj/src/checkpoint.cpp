#include "eet/checkpoint.hpp"

#include <algorithm>

namespace eet::ckpt {

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

enum Section : std::uint8_t { kWeights = 0, kOptimizer = 1, kSchedule = 2, kCentroids = 3, kIdentities = 4 };

struct TensorRef {
  std::string name;
  Section section;
  const Matrix* value;
};

void round(Matrix& m) {
  for (auto& x : m.data()) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

io::Bytes encode(const Checkpoint& c) {
  std::vector<TensorRef> table;
  for (const auto& e : c.params.entries()) table.push_back({e.name, kWeights, &e.value});
  if (c.optimizer) {
    if (c.optimizer->m.size() != c.params.size() || c.optimizer->v.size() != c.params.size()) {
      throw Error("optimizer state does not match the parameter store");
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      table.push_back({"opt.m." + c.params.entry(i).name, kOptimizer, &c.optimizer->m[i]});
      table.push_back({"opt.v." + c.params.entry(i).name, kOptimizer, &c.optimizer->v[i]});
    }
  }
  const Matrix beta = Matrix::row(c.schedule_beta);
  table.push_back({"schedule.beta", kSchedule, &beta});
  table.push_back({"centroids", kCentroids, &c.centroids});
  table.push_back({"identities", kIdentities, &c.identities});

  io::ByteWriter w;
  w.magic("EETK");
  w.u16(kVersion);
  w.str32(c.config_json);
  w.u64(c.optimizer ? c.optimizer->step : 0);
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& t : table) {
    w.str16(t.name);
    w.u8(t.section);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.value->rows()));
    w.u32(static_cast<std::uint32_t>(t.value->cols()));
  }
  for (const auto& t : table) {
    if (!t.value->all_finite()) throw Error("non-finite tensor " + t.name);
    w.f32_array(*t.value);
  }
  const auto digest = io::sha256(w.bytes());
  w.raw(digest);
  return w.take();
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 32 + 6) throw Error("checkpoint too short");
  const auto body = bytes.first(bytes.size() - 32);
  const auto digest = io::sha256(body);
  if (!std::equal(digest.begin(), digest.end(), bytes.end() - 32)) throw Error("checkpoint digest mismatch");

  io::ByteReader r(body);
  r.expect_magic("EETK");
  if (const auto v = r.u16(); v != kVersion) throw Error("unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  c.config_json = r.str32();
  const std::uint64_t opt_step = r.u64();

  struct Header {
    std::string name;
    std::uint8_t section;
    std::size_t rows, cols;
  };
  std::vector<Header> headers(r.u32());
  for (auto& h : headers) {
    h.name = r.str16();
    h.section = r.u8();
    if (r.u8() != kDtypeF32) throw Error("unsupported tensor dtype for " + h.name);
    h.rows = r.u32();
    h.cols = r.u32();
  }
  diffusion::OptimizerState opt;
  bool have_opt = false;
  for (const auto& h : headers) {
    Matrix m = r.f32_array(h.rows, h.cols);
    switch (h.section) {
      case kWeights:
        c.params.add(h.name, std::move(m));
        break;
      case kOptimizer:
        have_opt = true;
        (h.name.rfind("opt.m.", 0) == 0 ? opt.m : opt.v).push_back(std::move(m));
        break;
      case kSchedule:
        c.schedule_beta = m.row_vector(0);
        break;
      case kCentroids:
        c.centroids = std::move(m);
        break;
      case kIdentities:
        c.identities = std::move(m);
        break;
      default:
        throw Error("unknown checkpoint section for " + h.name);
    }
  }
  if (r.remaining() != 0) throw Error("trailing bytes in checkpoint");
  if (have_opt) {
    if (opt.m.size() != c.params.size() || opt.v.size() != c.params.size()) {
      throw Error("optimizer section does not match the weights");
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (!opt.m[i].same_shape(c.params.entry(i).value) || !opt.v[i].same_shape(c.params.entry(i).value)) {
        throw Error("optimizer moment shape mismatch for " + c.params.entry(i).name);
      }
    }
    opt.step = opt_step;
    c.optimizer = std::move(opt);
  }
  return c;
}

void save(const Checkpoint& c, const std::filesystem::path& path) { io::write_file(path, encode(c)); }

Checkpoint load(const std::filesystem::path& path) {
  try {
    return decode(io::read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void round_to_storage(Checkpoint& c) {
  for (std::size_t i = 0; i < c.params.size(); ++i) round(c.params.entry(i).value);
  if (c.optimizer) {
    for (auto& m : c.optimizer->m) round(m);
    for (auto& v : c.optimizer->v) round(v);
  }
  for (auto& b : c.schedule_beta) b = static_cast<double>(static_cast<float>(b));
  round(c.centroids);
  round(c.identities);
}

}  // namespace eet::ckpt
