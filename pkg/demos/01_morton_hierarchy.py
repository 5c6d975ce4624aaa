"""Morton codes and the sort-free octree hierarchy, step by step."""
import numpy as np

from lidarcodec.morton import (
    build_hierarchy, coarsen, count_sorts, expand_children, initial_sort, morton_decode, morton_encode,
)

# A Morton code interleaves coordinate bits: x takes bits 0, 3, 6..., y 1, 4, 7..., z 2, 5, 8...
print(morton_encode((1, 0, 0), 3), morton_encode((0, 1, 0), 3), morton_encode((0, 0, 1), 3))
print(morton_encode((5, 3, 6), 3), "->", morton_decode(morton_encode((5, 3, 6), 3), 3))

# Halving every coordinate is a 3-bit shift of the code, so parents of a
# Morton-sorted list are already sorted and adjacent.
rng = np.random.default_rng(0)
coords = rng.integers(0, 12, size=(40, 3))  # crowded, so siblings share parents
with count_sorts() as sorts:
    top = initial_sort(coords, 6)
    parent, labels = coarsen(top)
    print("sorts so far:", sorts())

print("children codes >> 3:", (top.codes >> 3).tolist())
print("parent codes       :", parent.codes.tolist())
print("octant labels      :", [f"{o:08b}" for o in labels.octant])
print("stage 1 (low half) :", labels.stage1.tolist())
print("stage 2 (high half):", labels.stage2.tolist())

# Expanding the parents with their labels gives back the children, in order.
child = expand_children(parent, labels)
print("expand == original:", np.array_equal(child.coords, top.coords))

# The whole hierarchy: voxel counts shrink toward level 2.
levels, labels = build_hierarchy(top)
for b in sorted(levels):
    print(f"level {b}: {levels[b].count:3d} voxels")
