#pragma once

#include "odpg/datasynth.hpp"

namespace odpg {

// Silhouette of the flat garment render (body panel plus sleeves).
std::vector<std::uint8_t> flat_garment_mask(int size = 64);

// Pattern color lookup in image coordinates.
Rgb garment_color_at(const GarmentSpec& g, int x, int y);

}  // namespace odpg
