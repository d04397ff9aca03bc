#include "slpt/components.hpp"

#include "slpt/errors.hpp"

namespace slpt {

std::vector<std::vector<int>> connected_components(std::span<const std::uint8_t> fg, int height, int width) {
    if (fg.size() != static_cast<std::size_t>(height) * width)
        throw InvalidArgument("connected_components: raster size mismatch");
    std::vector<std::vector<int>> comps;
    std::vector<std::uint8_t> seen(fg.size(), 0);
    std::vector<int> stack;
    for (int start = 0; start < static_cast<int>(fg.size()); ++start) {
        if (!fg[start] || seen[start]) continue;
        std::vector<int> comp;
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            comp.push_back(p);
            const int y = p / width, x = p % width;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[0] >= height || n[1] < 0 || n[1] >= width) continue;
                const int q = n[0] * width + n[1];
                if (fg[q] && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            }
        }
        comps.push_back(std::move(comp));
    }
    return comps;
}

} // namespace slpt
