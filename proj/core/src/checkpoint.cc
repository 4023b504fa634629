#include "hex4d/checkpoint.h"

#include <fstream>
#include <sstream>
#include <vector>

namespace hex4d {
namespace {

constexpr char kMagic[8] = {'H', '4', 'D', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const uint32_t n = get<uint32_t>(is);
  if (n > (1u << 28)) throw IoError("checkpoint string absurdly long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint truncated");
  return s;
}

template <class S>
void put_values(std::ostream& os, const Tensor<S>& t) {
  std::vector<double> buf(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<double>(t[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

template <class S>
void get_values(std::istream& is, Tensor<S>& t) {
  std::vector<double> buf(static_cast<size_t>(t.size()));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!is) throw IoError("checkpoint truncated in tensor data");
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(buf[static_cast<size_t>(i)]);
}

}  // namespace

template <class S>
void save_checkpoint(std::ostream& os, const ParamStore<S>& ps, const AdamState<S>* adam,
                     const Rng* rng, uint64_t iteration, const std::string& meta) {
  os.write(kMagic, sizeof(kMagic));
  put<uint64_t>(os, iteration);
  put_str(os, meta);
  put<uint32_t>(os, static_cast<uint32_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const auto& e = ps.entry(i);
    put_str(os, e.name);
    put<uint8_t>(os, static_cast<uint8_t>(e.group));
    put<uint8_t>(os, static_cast<uint8_t>(e.value.ndim()));
    for (int d = 0; d < e.value.ndim(); ++d) put<int32_t>(os, e.value.dim(d));
    put_values(os, e.value);
  }
  put<uint8_t>(os, adam ? 1 : 0);
  if (adam) {
    H4D_CHECK(static_cast<int>(adam->m.size()) == ps.size(), "adam state out of sync with store");
    put<double>(os, adam->hp.lr_grids);
    put<double>(os, adam->hp.lr_mlp);
    put<double>(os, adam->hp.beta1);
    put<double>(os, adam->hp.beta2);
    put<double>(os, adam->hp.eps);
    put<uint64_t>(os, static_cast<uint64_t>(adam->step));
    for (int i = 0; i < ps.size(); ++i) {
      put_values(os, adam->m[static_cast<size_t>(i)]);
      put_values(os, adam->v[static_cast<size_t>(i)]);
    }
  }
  put<uint8_t>(os, rng ? 1 : 0);
  if (rng) {
    std::ostringstream ss;
    rng->save(ss);
    put_str(os, ss.str());
  }
  if (!os) throw IoError("checkpoint write failed");
}

template <class S>
void load_checkpoint(std::istream& is, ParamStore<S>& ps, AdamState<S>* adam, Rng* rng,
                     uint64_t* iteration, std::string* meta) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw IoError("not a checkpoint file");
  const uint64_t iter = get<uint64_t>(is);
  if (iteration) *iteration = iter;
  const std::string m = get_str(is);
  if (meta) *meta = m;
  const uint32_t nparams = get<uint32_t>(is);
  const bool fresh = ps.size() == 0;
  if (!fresh)
    H4D_CHECK(static_cast<uint32_t>(ps.size()) == nparams, "checkpoint holds ", nparams,
              " parameters, store has ", ps.size());
  for (uint32_t i = 0; i < nparams; ++i) {
    const std::string name = get_str(is);
    const auto group = static_cast<LrGroup>(get<uint8_t>(is));
    const int ndim = get<uint8_t>(is);
    std::vector<int> shape(static_cast<size_t>(ndim));
    for (int d = 0; d < ndim; ++d) shape[static_cast<size_t>(d)] = get<int32_t>(is);
    if (fresh) {
      Tensor<S> t(shape);
      get_values(is, t);
      ps.add(name, std::move(t), group);
    } else {
      auto& e = ps.entry(static_cast<int>(i));
      H4D_CHECK(e.name == name, "checkpoint parameter order mismatch: ", name, " vs ", e.name);
      H4D_CHECK(e.group == group, "checkpoint group mismatch for ", name);
      H4D_CHECK(e.value.shape == shape, "checkpoint shape mismatch for ", name);
      get_values(is, e.value);
    }
  }
  const bool has_adam = get<uint8_t>(is) != 0;
  if (has_adam) {
    AdamParams hp;
    hp.lr_grids = get<double>(is);
    hp.lr_mlp = get<double>(is);
    hp.beta1 = get<double>(is);
    hp.beta2 = get<double>(is);
    hp.eps = get<double>(is);
    const auto step = static_cast<int64_t>(get<uint64_t>(is));
    if (adam) {
      adam->hp = hp;
      adam->init(ps);
      adam->step = step;
      for (int i = 0; i < ps.size(); ++i) {
        get_values(is, adam->m[static_cast<size_t>(i)]);
        get_values(is, adam->v[static_cast<size_t>(i)]);
      }
    } else {
      // Skip the moment data.
      for (int i = 0; i < ps.size(); ++i) {
        Tensor<S> scratch(ps.entry(i).value.shape);
        get_values(is, scratch);
        get_values(is, scratch);
      }
    }
  } else if (adam) {
    adam->init(ps);
  }
  const bool has_rng = get<uint8_t>(is) != 0;
  if (has_rng) {
    const std::string state = get_str(is);
    if (rng) {
      std::istringstream ss(state);
      rng->load(ss);
    }
  }
}

template <class S>
void save_checkpoint_file(const std::string& path, const ParamStore<S>& ps,
                          const AdamState<S>* adam, const Rng* rng, uint64_t iteration,
                          const std::string& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(detail::concat("cannot open for write: ", path));
  save_checkpoint(os, ps, adam, rng, iteration, meta);
}

template <class S>
void load_checkpoint_file(const std::string& path, ParamStore<S>& ps, AdamState<S>* adam,
                          Rng* rng, uint64_t* iteration, std::string* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(detail::concat("cannot open checkpoint: ", path));
  load_checkpoint(is, ps, adam, rng, iteration, meta);
}

template void save_checkpoint(std::ostream&, const ParamStore<float>&, const AdamState<float>*,
                              const Rng*, uint64_t, const std::string&);
template void save_checkpoint(std::ostream&, const ParamStore<double>&, const AdamState<double>*,
                              const Rng*, uint64_t, const std::string&);
template void load_checkpoint(std::istream&, ParamStore<float>&, AdamState<float>*, Rng*,
                              uint64_t*, std::string*);
template void load_checkpoint(std::istream&, ParamStore<double>&, AdamState<double>*, Rng*,
                              uint64_t*, std::string*);
template void save_checkpoint_file(const std::string&, const ParamStore<float>&,
                                   const AdamState<float>*, const Rng*, uint64_t,
                                   const std::string&);
template void save_checkpoint_file(const std::string&, const ParamStore<double>&,
                                   const AdamState<double>*, const Rng*, uint64_t,
                                   const std::string&);
template void load_checkpoint_file(const std::string&, ParamStore<float>&, AdamState<float>*,
                                   Rng*, uint64_t*, std::string*);
template void load_checkpoint_file(const std::string&, ParamStore<double>&, AdamState<double>*,
                                   Rng*, uint64_t*, std::string*);

}  // namespace hex4d
