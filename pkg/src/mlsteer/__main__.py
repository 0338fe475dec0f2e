from mlsteer.applications.cli import cli

if __name__ == "__main__":
    cli()
