import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqflux.mesh import (ForestMismatchError, build_uniform_mesh, common_refinement, dump_mesh, export_vtk,
                         hat_function_sum, load_mesh, parent_map, refine, refine_uniform, same_mesh, union_cut,
                         vertex_patches)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_uniform_mesh_counts(n):
    m = build_uniform_mesh(n)
    assert m.n_elements == 2 * n * n
    assert m.n_vertices == (n + 1) ** 2
    assert np.isclose(m.areas.sum(), 1.0)
    assert m.is_conforming()
    assert np.all(m.signed_areas > 0)


def test_uniform_refinement_halves_h_and_keeps_shape_bound():
    m = build_uniform_mesh(4)
    r = refine_uniform(m, 2)
    assert r.n_elements == 4 * m.n_elements
    assert np.isclose(r.diameters.max(), 0.5 * m.diameters.max())
    assert np.isclose(r.shape_ratios.max(), m.shape_ratios.max())


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=12), st.integers(1, 3))
def test_local_refinement_is_conforming_and_nested(marks, rounds):
    mesh = build_uniform_mesh(3)
    for _ in range(rounds):
        sel = np.unique(np.array(marks) % mesh.n_elements)
        new = refine(mesh, sel)
        assert new.is_conforming()
        assert np.isclose(new.areas.sum(), 1.0)
        pm = parent_map(new, mesh)
        # every coarse element is tiled exactly by its children
        assert np.allclose(np.bincount(pm, weights=new.areas, minlength=mesh.n_elements), mesh.areas)
        mesh = new
    # bisection of right isosceles triangles only produces similar triangles
    assert np.allclose(mesh.shape_ratios, build_uniform_mesh(3).shape_ratios.max())


def test_union_cut_and_common_refinement():
    base = build_uniform_mesh(2)
    a = refine(base, [0, 1])
    b = refine(base, [5, 6])
    u = union_cut(a, b)
    assert u.is_conforming()
    fine, mp, mc = common_refinement(a, b)
    assert same_mesh(fine, u)
    assert np.allclose(np.bincount(mp, weights=fine.areas, minlength=a.n_elements), a.areas)
    assert np.allclose(np.bincount(mc, weights=fine.areas, minlength=b.n_elements), b.areas)
    assert same_mesh(union_cut(a, base), a)


def test_forest_mismatch():
    with pytest.raises(ForestMismatchError):
        union_cut(build_uniform_mesh(2), build_uniform_mesh(2))


def test_hat_functions_partition_of_unity(rng):
    m = refine(build_uniform_mesh(3), [0, 3, 7])
    pts = rng.uniform(0, 1, size=(40, 2))
    assert np.allclose(hat_function_sum(m, pts), 1.0)


def test_vertex_patches_cover_fine_mesh_three_times():
    coarse = build_uniform_mesh(3)
    fine = refine(coarse, [1, 2, 10])
    fmap = parent_map(fine, coarse)
    patches = vertex_patches(coarse, fine, fmap, np.full(fine.n_elements, 2))
    assert len(patches) == coarse.n_vertices
    counts = np.zeros(fine.n_elements, int)
    for pt in patches:
        counts[pt.elements] += 1
        assert pt.p == 3
    assert np.all(counts == 3)
    assert sum(pt.is_interior for pt in patches) == int((~coarse.boundary_vertex_mask).sum())


def test_mesh_dump_roundtrip(tmp_path):
    m = refine(refine_uniform(build_uniform_mesh(2), 1), [0, 2])
    dump_mesh(m, tmp_path / "m.txt")
    back = load_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.leaves, m.leaves)
    assert np.allclose(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    again = refine(back, [1])
    assert again.is_conforming()


def test_vtk_export(tmp_path):
    m = build_uniform_mesh(2)
    export_vtk(m, tmp_path / "m.vtk", cell_data={"deg": np.ones(m.n_elements)},
               point_data={"x": m.vertices[:, 0]})
    text = (tmp_path / "m.vtk").read_text()
    assert "CELLS 8 32" in text
    assert "POINT_DATA 9" in text
    assert "np.float64" not in text
    assert text.split("CELL_TYPES 8\n")[1].split()[:8] == ["5"] * 8
