#include "bags/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace bags {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  template <class R>
  void reals(const R& values) {
    put<std::uint64_t>(values.size());
    for (auto x : values) put<double>(double(x));
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<Real> reals() {
    const auto n = get<std::uint64_t>();
    need(n * 8);
    std::vector<Real> out(n);
    for (auto& x : out) x = Real(get<double>());
    return out;
  }
  std::vector<double> doubles() {
    const auto n = get<std::uint64_t>();
    need(n * 8);
    std::vector<double> out(n);
    for (auto& x : out) x = get<double>();
    return out;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw std::runtime_error("checkpoint section " + where_ + " is truncated");
  }
  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

void put_adam(Writer& w, const AdamState& a) {
  w.put<std::uint64_t>(a.step);
  w.reals(a.m);
  w.reals(a.v);
}

AdamState get_adam(Reader& r) {
  AdamState a;
  a.step = r.get<std::uint64_t>();
  a.m = r.reals();
  a.v = r.reals();
  if (a.m.size() != a.v.size()) throw std::runtime_error("checkpoint: Adam moments differ in length");
  return a;
}

std::vector<std::pair<std::string, std::string>> read_sections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(data, "header");
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::string(magic, 4) != "BAGS") throw std::runtime_error(path.string() + " is not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<std::pair<std::string, std::string>> sections;
  std::size_t pos = 8;
  while (pos < data.size()) {
    if (data.size() - pos < 12) throw std::runtime_error(path.string() + ": truncated section header");
    std::string tag = data.substr(pos, 4);
    std::uint64_t len;
    std::memcpy(&len, data.data() + pos + 4, 8);
    pos += 12;
    if (data.size() - pos < len) throw std::runtime_error(path.string() + ": section " + tag + " is truncated");
    sections.emplace_back(tag, data.substr(pos, len));
    pos += len;
  }
  return sections;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  std::vector<std::pair<std::string, std::string>> sections;
  {
    Writer w;
    w.put<std::uint64_t>(state.cloud.size());
    for (const Tensor* t : state.cloud.parameters()) w.reals(t->data());
    sections.emplace_back("CLUD", w.take());
  }
  if (state.bpn) {
    Writer w;
    BlurProposalNetwork net = *state.bpn;
    const BpnConfig& c = net.config();
    for (std::size_t v : {c.feat_channels, c.feat_out, c.conv_kernels[0], c.conv_kernels[1], c.conv_kernels[2],
                          c.view_dim, c.pos_freqs, c.hidden}) {
      w.put<std::uint64_t>(v);
    }
    w.put<double>(c.head_init_range);
    w.put<double>(c.head_center_weight);
    w.put<std::uint64_t>(net.num_views());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.heads().size()));
    for (const auto& h : net.heads()) {
      w.put<std::int32_t>(h.scale);
      w.put<std::int32_t>(h.kernel_size);
    }
    auto params = net.parameters();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const NamedParameter& p : params) {
      w.str(p.name);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor->dim()));
      for (std::size_t d : p.tensor->shape()) w.put<std::uint64_t>(d);
      w.reals(p.tensor->data());
    }
    sections.emplace_back("BPN_", w.take());
  }
  {
    Writer w;
    for (const AdamState& a : state.cloud_adam) put_adam(w, a);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(state.bpn_adam.size()));
    for (const auto& [name, a] : state.bpn_adam) {
      w.str(name);
      put_adam(w, a);
    }
    sections.emplace_back("OPTM", w.take());
  }
  {
    Writer w;
    w.put<std::uint64_t>(state.iteration);
    w.put<std::uint64_t>(state.epoch_pos);
    w.put<std::uint64_t>(state.epoch_order.size());
    for (auto v : state.epoch_order) w.put<std::uint32_t>(v);
    w.put<double>(state.scene_extent);
    w.reals(state.stats.grad_sum);
    w.put<std::uint64_t>(state.stats.count.size());
    for (auto c : state.stats.count) w.put<std::uint32_t>(c);
    sections.emplace_back("SCHD", w.take());
  }
  {
    Writer w;
    w.str(serialize_rng(state.view_rng));
    w.str(serialize_rng(state.densify_rng));
    sections.emplace_back("RNG_", w.take());
  }
  {
    Writer w;
    w.put<std::uint64_t>(state.log.size());
    for (const LossRecord& r : state.log) {
      w.put<std::uint64_t>(r.iter);
      w.put<std::int32_t>(r.scale);
      for (double x : {r.l1, r.dssim, r.mask, r.total}) w.put<double>(x);
    }
    sections.emplace_back("LOG_", w.take());
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write("BAGS", 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  for (const auto& [tag, payload] : sections) {
    const std::uint64_t len = payload.size();
    out.write(tag.data(), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<std::string> checkpoint_sections(const std::filesystem::path& path) {
  std::vector<std::string> tags;
  for (const auto& s : read_sections(path)) tags.push_back(s.first);
  return tags;
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  TrainState state;
  bool have_cloud = false, have_schedule = false;
  for (const auto& [tag, payload] : read_sections(path)) {
    Reader r(payload, tag);
    if (tag == "CLUD") {
      const auto n = r.get<std::uint64_t>();
      std::array<std::vector<Real>, kCloudGroups> arrays;
      for (auto& a : arrays) a = r.reals();
      const std::array<std::size_t, kCloudGroups> widths{3, 3, 4, 1, 3};
      for (std::size_t g = 0; g < kCloudGroups; ++g) {
        if (arrays[g].size() != n * widths[g]) throw std::runtime_error("checkpoint: cloud arrays disagree on size");
      }
      state.cloud = GaussianCloud::from_values(std::move(arrays[0]), std::move(arrays[1]), std::move(arrays[2]),
                                               std::move(arrays[3]), std::move(arrays[4]));
      have_cloud = true;
    } else if (tag == "BPN_") {
      BpnConfig c;
      for (std::size_t* v : {&c.feat_channels, &c.feat_out, &c.conv_kernels[0], &c.conv_kernels[1],
                             &c.conv_kernels[2], &c.view_dim, &c.pos_freqs, &c.hidden}) {
        *v = r.get<std::uint64_t>();
      }
      c.head_init_range = r.get<double>();
      c.head_center_weight = r.get<double>();
      const auto views = r.get<std::uint64_t>();
      std::vector<std::pair<int, int>> heads(r.get<std::uint32_t>());
      for (auto& h : heads) {
        h.first = r.get<std::int32_t>();
        h.second = r.get<std::int32_t>();
      }
      std::vector<std::pair<std::string, Tensor>> named(r.get<std::uint32_t>());
      for (auto& [name, t] : named) {
        name = r.str();
        Shape shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = r.get<std::uint64_t>();
        std::vector<Real> values = r.reals();
        if (values.size() != shape_numel(shape)) {
          throw std::runtime_error("checkpoint: array '" + name + "' does not match its shape");
        }
        t = Tensor::from(shape, std::move(values));
      }
      state.bpn = BlurProposalNetwork::from_parameters(c, views, named, heads);
    } else if (tag == "OPTM") {
      for (AdamState& a : state.cloud_adam) a = get_adam(r);
      const auto n = r.get<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        state.bpn_adam[name] = get_adam(r);
      }
    } else if (tag == "SCHD") {
      state.iteration = r.get<std::uint64_t>();
      state.epoch_pos = r.get<std::uint64_t>();
      state.epoch_order.resize(r.get<std::uint64_t>());
      for (auto& v : state.epoch_order) v = r.get<std::uint32_t>();
      state.scene_extent = r.get<double>();
      state.stats.grad_sum = r.doubles();
      state.stats.count.resize(r.get<std::uint64_t>());
      for (auto& c : state.stats.count) c = r.get<std::uint32_t>();
      have_schedule = true;
    } else if (tag == "RNG_") {
      state.view_rng = deserialize_rng(r.str());
      state.densify_rng = deserialize_rng(r.str());
    } else if (tag == "LOG_") {
      state.log.resize(r.get<std::uint64_t>());
      for (LossRecord& rec : state.log) {
        rec.iter = r.get<std::uint64_t>();
        rec.scale = r.get<std::int32_t>();
        rec.l1 = r.get<double>();
        rec.dssim = r.get<double>();
        rec.mask = r.get<double>();
        rec.total = r.get<double>();
      }
    }
    // Unknown sections are skipped so newer writers stay readable.
  }
  if (!have_cloud || !have_schedule) {
    throw std::runtime_error(path.string() + ": checkpoint lacks the cloud or schedule section");
  }
  return state;
}

}  // namespace bags
