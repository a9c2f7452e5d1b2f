#pragma once

#include <array>
#include <string>
#include <string_view>

namespace deepdiff {

/// The seven model variants. Raw-family models predict from stacked HM
/// matrices; Aux-family models add per-cell towers and heads.
enum class Variant { RawD, RawC, Raw, Aux, RawAux, AuxSiamese, RawAuxSiamese };

inline constexpr std::array<Variant, 7> kAllVariants = {
    Variant::RawD,   Variant::RawC,       Variant::Raw,          Variant::Aux,
    Variant::RawAux, Variant::AuxSiamese, Variant::RawAuxSiamese};

std::string_view variant_tag(Variant v);
/// Throws std::invalid_argument listing every valid tag.
Variant parse_variant(std::string_view tag);

/// Variants with per-cell towers and y_A/y_B heads.
bool has_cell_towers(Variant v);
/// Variants with a difference tower over [XA; XB; XA-XB] (or a subset).
bool has_raw_tower(Variant v);
bool has_siamese(Variant v);

}  // namespace deepdiff
