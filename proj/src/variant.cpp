#include "deepdiff/variant.hpp"

#include <stdexcept>

namespace deepdiff {

std::string_view variant_tag(Variant v) {
  switch (v) {
    case Variant::RawD: return "raw_d";
    case Variant::RawC: return "raw_c";
    case Variant::Raw: return "raw";
    case Variant::Aux: return "aux";
    case Variant::RawAux: return "raw_aux";
    case Variant::AuxSiamese: return "aux_siamese";
    case Variant::RawAuxSiamese: return "raw_aux_siamese";
  }
  throw std::invalid_argument("unknown variant");
}

Variant parse_variant(std::string_view tag) {
  for (Variant v : kAllVariants) {
    if (variant_tag(v) == tag) return v;
  }
  std::string valid;
  for (Variant v : kAllVariants) {
    if (!valid.empty()) valid += ", ";
    valid += variant_tag(v);
  }
  throw std::invalid_argument("unknown variant '" + std::string(tag) + "'; valid variants: " +
                              valid);
}

bool has_cell_towers(Variant v) {
  return v == Variant::Aux || v == Variant::RawAux || v == Variant::AuxSiamese ||
         v == Variant::RawAuxSiamese;
}

bool has_raw_tower(Variant v) {
  return v == Variant::RawD || v == Variant::RawC || v == Variant::Raw ||
         v == Variant::RawAux || v == Variant::RawAuxSiamese;
}

bool has_siamese(Variant v) {
  return v == Variant::AuxSiamese || v == Variant::RawAuxSiamese;
}

}  // namespace deepdiff
