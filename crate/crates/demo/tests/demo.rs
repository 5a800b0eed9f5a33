use radmesh_demo::{extract, orbit, percentile_depth, render_mesh, scene};

#[test]
fn sphere_mesh_is_closed_genus_zero() {
    let (_, s) = extract(&scene("sphere").unwrap(), 40).unwrap();
    assert!(s.closed);
    assert_eq!(s.euler, 2);
    assert!(s.max_vertex_error < 1.5, "{}", s.max_vertex_error);
    assert!(s.to_json().contains("\"euler\":2"));
}

#[test]
fn torus_has_euler_zero() {
    let (_, s) = extract(&scene("torus").unwrap(), 64).unwrap();
    assert_eq!(s.euler, 0);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(scene("teapot").is_err());
    for s in ["sphere", "torus", "box", "two-spheres"] {
        assert!(scene(s).is_ok(), "{s}");
    }
    assert!(extract(&scene("sphere").unwrap(), 1).is_err());
    let cam = orbit(0.0, 0.0, 3.0, 8, 8);
    assert!(percentile_depth(&scene("sphere").unwrap(), &cam, 0.0, 16).is_err());
}

#[test]
fn render_shows_the_object_in_the_middle_and_background_at_the_corner() {
    let spec = scene("sphere").unwrap();
    let (fm, _) = extract(&spec, 32).unwrap();
    let cam = orbit(30.0, 20.0, 3.0, 32, 32);
    let (px, _) = render_mesh(&fm, &cam, [1.0, 1.0, 1.0]).unwrap();
    assert_eq!(px.len(), 32 * 32 * 4);
    let at = |i: usize, j: usize| &px[(j * 32 + i) * 4..(j * 32 + i) * 4 + 3];
    assert_eq!(at(0, 0), &[255, 255, 255]);
    assert_ne!(at(16, 16), &[255, 255, 255]);
}

#[test]
fn percentile_depth_is_brighter_in_the_middle() {
    let spec = scene("sphere").unwrap();
    let cam = orbit(0.0, 0.0, 3.0, 16, 16);
    let px = percentile_depth(&spec, &cam, 50.0, 64).unwrap();
    let at = |i: usize, j: usize| px[(j * 16 + i) * 4..(j * 16 + i) * 4 + 3].to_vec();
    // The corner ray misses the sphere and never becomes opaque.
    assert_eq!(at(0, 0), vec![160, 40, 40]);
    // The middle ray hits the front of the sphere, the near side of the box.
    let mid = at(8, 8);
    assert_eq!(mid[0], mid[1]);
    assert!(mid[0] > 128, "{mid:?}");
}
