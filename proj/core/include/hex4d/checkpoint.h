#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "hex4d/param_store.h"
#include "hex4d/rng.h"

namespace hex4d {

// Binary checkpoint: parameters (and optionally Adam moments + RNG state)
// serialized as float64 regardless of the store's scalar type, so a
// save/load round trip is bit-exact for both float and double stores.
// `meta` is an opaque string (the trainer stores its bookkeeping JSON there).

template <class S>
void save_checkpoint(std::ostream& os, const ParamStore<S>& ps, const AdamState<S>* adam,
                     const Rng* rng, uint64_t iteration, const std::string& meta);

// If `ps` is empty its entries are created from the file; otherwise names,
// shapes, and groups must match exactly. adam/rng/meta may be null to skip.
template <class S>
void load_checkpoint(std::istream& is, ParamStore<S>& ps, AdamState<S>* adam, Rng* rng,
                     uint64_t* iteration, std::string* meta);

template <class S>
void save_checkpoint_file(const std::string& path, const ParamStore<S>& ps,
                          const AdamState<S>* adam, const Rng* rng, uint64_t iteration,
                          const std::string& meta);

template <class S>
void load_checkpoint_file(const std::string& path, ParamStore<S>& ps, AdamState<S>* adam,
                          Rng* rng, uint64_t* iteration, std::string* meta);

extern template void save_checkpoint(std::ostream&, const ParamStore<float>&,
                                     const AdamState<float>*, const Rng*, uint64_t,
                                     const std::string&);
extern template void save_checkpoint(std::ostream&, const ParamStore<double>&,
                                     const AdamState<double>*, const Rng*, uint64_t,
                                     const std::string&);
extern template void load_checkpoint(std::istream&, ParamStore<float>&, AdamState<float>*, Rng*,
                                     uint64_t*, std::string*);
extern template void load_checkpoint(std::istream&, ParamStore<double>&, AdamState<double>*,
                                     Rng*, uint64_t*, std::string*);
extern template void save_checkpoint_file(const std::string&, const ParamStore<float>&,
                                          const AdamState<float>*, const Rng*, uint64_t,
                                          const std::string&);
extern template void save_checkpoint_file(const std::string&, const ParamStore<double>&,
                                          const AdamState<double>*, const Rng*, uint64_t,
                                          const std::string&);
extern template void load_checkpoint_file(const std::string&, ParamStore<float>&,
                                          AdamState<float>*, Rng*, uint64_t*, std::string*);
extern template void load_checkpoint_file(const std::string&, ParamStore<double>&,
                                          AdamState<double>*, Rng*, uint64_t*, std::string*);

}  // namespace hex4d
