use risac_bench::{los_fixture, nlos_observations};

#[test]
fn fixtures_have_the_default_shapes() {
    let (scene, stacks) = los_fixture(0);
    let c = &scene.config;
    assert_eq!(stacks.y.dim(), (c.n_t, c.n_ris, c.subcarriers));
    assert_eq!(stacks.z.dim(), (c.n_t, c.n_ut, c.subcarriers));
    let obs = nlos_observations(0);
    assert_eq!(obs.len(), 6);
    assert!(obs.windows(2).all(|w| w[0].weight >= w[1].weight));
}
