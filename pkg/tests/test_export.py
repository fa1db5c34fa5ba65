from jpegxs_uep import Actor, DEFAULT_CONFIG


def test_actor_name():
    """Verify the UepActor class name."""
    assert Actor.UepActor.__name__ == "UepActor"


def test_actor_exposure():
    """Check if UepActor and DEFAULT_CONFIG are exposed."""
    assert hasattr(Actor, "UepActor")
    assert DEFAULT_CONFIG["block_packets"] == 255
    assert DEFAULT_CONFIG["packet_len"] == 1500
