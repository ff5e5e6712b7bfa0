import numpy as np
import pytest

from quadforge import domains, msh_io
from quadforge.errors import MeshFormatError


def test_round_trip_bit_exact(tmp_path, smd_mesh):
    path = tmp_path / "mesh.msh"
    msh_io.save_mesh(path, smd_mesh)
    again = msh_io.load_mesh(path)
    assert np.array_equal(again.vertices, smd_mesh.vertices)
    assert np.array_equal(np.sort(again.triangles, axis=1), np.sort(smd_mesh.triangles, axis=1))
    assert len(again.loops) == len(smd_mesh.loops)


def test_two_triangle_square_file(tmp_path):
    path = tmp_path / "tiny.msh"
    lines = [
        "$MeshFormat", "2.2 0 8", "$EndMeshFormat",
        "$Nodes", "4",
        "1 0 0 0", "2 1 0 0", "3 1 1 0", "4 0 1 0",
        "$EndNodes",
        "$Elements", "2",
        "1 2 2 0 1 1 2 3",
        "2 2 2 0 1 1 3 4",
        "$EndElements",
    ]
    path.write_text("\n".join(lines) + "\n")
    m = msh_io.load_mesh(path)
    assert m.n_vertices == 4
    assert m.n_triangles == 2
    assert len(m.loops) == 1
    assert len(m.loops[0]) == 4


def test_clockwise_triangle_reoriented(tmp_path):
    path = tmp_path / "cw.msh"
    lines = [
        "$MeshFormat", "2.2 0 8", "$EndMeshFormat",
        "$Nodes", "4",
        "1 0 0 0", "2 1 0 0", "3 1 1 0", "4 0 1 0",
        "$EndNodes",
        "$Elements", "2",
        "1 2 2 0 1 1 3 2",
        "2 2 2 0 1 1 3 4",
        "$EndElements",
    ]
    path.write_text("\n".join(lines) + "\n")
    m = msh_io.load_mesh(path)
    assert m.reoriented == 1
    assert np.all(m.areas > 0)


def test_parse_failure(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    with pytest.raises(MeshFormatError):
        msh_io.load_mesh(path)
    path.write_text("not a mesh at all\n")
    with pytest.raises(MeshFormatError):
        msh_io.load_mesh(path)


def test_sparse_node_ids(tmp_path):
    path = tmp_path / "sparse.msh"
    lines = [
        "$MeshFormat", "2.2 0 8", "$EndMeshFormat",
        "$Nodes", "3",
        "10 0 0 0", "20 1 0 0", "31 0 1 0",
        "$EndNodes",
        "$Elements", "1",
        "7 2 2 0 1 10 20 31",
        "$EndElements",
    ]
    path.write_text("\n".join(lines) + "\n")
    m = msh_io.load_mesh(path)
    assert m.n_vertices == 3
    assert m.n_triangles == 1


def test_node_data_block(tmp_path, square_mesh):
    path = tmp_path / "field.msh"
    msh_io.save_mesh(path, square_mesh)
    values = np.linspace(0, 1, square_mesh.n_vertices)
    msh_io.append_node_data(path, "H", values)
    text = path.read_text()
    assert "$NodeData" in text
    assert '"H"' in text
